from typing import List, Optional
from sqlmodel import SQLModel, Field

# ------------------------------------------------------------------
# Run configuration sections
# ------------------------------------------------------------------

class PathsConfig(SQLModel):
    dataset: str = "data/train.smi"
    vocab: str = "artifacts/vocab.tsv"
    checkpoint: str = "artifacts/vae.ckpt"
    latents: str = "artifacts/latents.ckpt"
    diffusion: str = "artifacts/diffusion.ckpt"
    samples: str = "artifacts/samples.smi"
    report: str = "artifacts/report.tsv"
    property_cache: Optional[str] = None

class ModelConfig(SQLModel):
    layers: int = Field(
        default=4,
        ge=0
    )
    decoder_layers: int = Field(
        default=4,
        ge=0
    )
    hidden: int = Field(
        default=128,
        gt=0
    )
    heads: int = Field(
        default=4,
        gt=0
    )
    ffn: int = Field(
        default=256,
        gt=0
    )
    theta_init: float = 0.5
    alphabet_size: int = Field(
        default=4,
        ge=4
    )
    max_degree: int = Field(
        default=20,
        gt=0
    )
    max_hcount: int = Field(
        default=50,
        gt=0
    )
    max_depth: int = Field(
        default=50,
        gt=0
    )
    max_len: int = Field(
        default=64,
        gt=0
    )
    use_dagcn: bool = True
    use_tree_features: bool = True

    def encoder_config(self, vocab_size: int) -> "EncoderConfig":
        return EncoderConfig(
            layers=self.layers,
            hidden=self.hidden,
            heads=self.heads,
            ffn=self.ffn,
            vocab_size=vocab_size,
            max_degree=self.max_degree,
            max_hcount=self.max_hcount,
            max_depth=self.max_depth,
            use_tree_features=self.use_tree_features,
        )

    def decoder_config(self, vocab_size: int) -> "DecoderConfig":
        return DecoderConfig(
            layers=self.decoder_layers,
            hidden=self.hidden,
            heads=self.heads,
            ffn=self.ffn,
            vocab_size=vocab_size,
            theta_init=self.theta_init,
            alphabet_size=self.alphabet_size,
            max_degree=self.max_degree,
            max_hcount=self.max_hcount,
            max_depth=self.max_depth,
            use_dagcn=self.use_dagcn,
            use_tree_features=self.use_tree_features,
        )

class TrainingConfig(SQLModel):
    epochs: int = Field(
        default=10,
        gt=0
    )
    batch_size: int = Field(
        default=16,
        gt=0
    )
    lr: float = Field(
        default=3e-4,
        gt=0
    )
    warmup_steps: Optional[int] = Field(
        default=None,
        ge=0
    )
    decay_rate: float = Field(
        default=0.999,
        gt=0,
        le=1
    )
    grad_clip: float = Field(
        default=5.0,
        gt=0
    )
    alpha: float = Field(
        default=1.0,
        ge=0
    )
    beta: float = Field(
        default=1.0,
        ge=0
    )
    delta: float = Field(
        default=0.2,
        ge=0
    )

class DiffusionConfig(SQLModel):
    T: int = Field(
        default=1000,
        ge=2
    )
    steps: int = Field(
        default=50,
        gt=0
    )
    eta: float = Field(
        default=0.0,
        ge=0
    )
    beta_start: float = Field(
        default=1e-4,
        gt=0,
        lt=1
    )
    beta_end: float = Field(
        default=0.02,
        gt=0,
        lt=1
    )
    depth: int = Field(
        default=6,
        gt=0
    )
    hidden: int = Field(
        default=256,
        gt=0
    )
    epochs: int = Field(
        default=50,
        gt=0
    )
    batch_size: int = Field(
        default=64,
        gt=0
    )
    lr: float = Field(
        default=1e-3,
        gt=0
    )
    warmup_steps: Optional[int] = Field(
        default=None,
        ge=0
    )
    decay_rate: float = Field(
        default=0.9995,
        gt=0,
        le=1
    )

class AssemblyConfig(SQLModel):
    budget: int = Field(
        default=200,
        gt=0
    )
    lambda_likelihood: float = Field(
        default=1.0,
        ge=0
    )
    lambda_property: float = Field(
        default=1.0,
        ge=0
    )
    lambda_match: float = Field(
        default=0.0,
        ge=0
    )
    target_W: Optional[float] = None
    target_logP: Optional[float] = None
    target_TPSA: Optional[float] = None
    width_W: float = Field(
        default=50.0,
        gt=0
    )
    width_logP: float = Field(
        default=1.0,
        gt=0
    )
    width_TPSA: float = Field(
        default=20.0,
        gt=0
    )

class RunSection(SQLModel):
    seed: int = 0
    workers: int = Field(
        default=1,
        gt=0
    )
    n_samples: int = Field(
        default=100,
        gt=0
    )
    temperature: float = Field(
        default=0.0,
        ge=0
    )
    unique_at: Optional[int] = Field(
        default=None,
        gt=0
    )

class RunConfig(SQLModel):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    assembly: AssemblyConfig = Field(default_factory=AssemblyConfig)
    run: RunSection = Field(default_factory=RunSection)

# ------------------------------------------------------------------
# Network configuration
# ------------------------------------------------------------------

class EncoderConfig(SQLModel):
    layers: int = Field(
        default=4,
        ge=0
    )
    hidden: int = Field(
        default=128,
        gt=0
    )
    heads: int = Field(
        default=4,
        gt=0
    )
    ffn: int = Field(
        default=256,
        gt=0
    )
    vocab_size: int = Field(
        gt=0
    )
    max_degree: int = 20
    max_hcount: int = 50
    max_depth: int = 50
    use_tree_features: bool = True

class DecoderConfig(SQLModel):
    layers: int = Field(
        default=4,
        ge=0
    )
    hidden: int = Field(
        default=128,
        gt=0
    )
    heads: int = Field(
        default=4,
        gt=0
    )
    ffn: int = Field(
        default=256,
        gt=0
    )
    vocab_size: int = Field(
        gt=0
    )
    theta_init: float = 0.5
    alphabet_size: int = Field(
        default=4,
        ge=4
    )
    max_degree: int = 20
    max_hcount: int = 50
    max_depth: int = 50
    use_dagcn: bool = True
    use_tree_features: bool = True
    n_aux: int = 3

# ------------------------------------------------------------------
# Reports
# ------------------------------------------------------------------

class MoleculeRecord(SQLModel):
    index: int
    smiles: Optional[str] = None
    valid: bool = False
    partial: bool = False
    W: Optional[float] = None
    logP: Optional[float] = None
    TPSA: Optional[float] = None

class GenerationReport(SQLModel):
    n_requested: int = Field(
        ge=0
    )
    n_valid: int = Field(
        ge=0
    )
    valid_fraction: float = Field(
        ge=0,
        le=1
    )
    unique_fraction: float = Field(
        ge=0,
        le=1
    )
    novelty_fraction: float = Field(
        ge=0,
        le=1
    )
    intdiv1: float = Field(
        ge=0,
        le=1
    )
    intdiv2: float = Field(
        ge=0,
        le=1
    )
    unique_at_k: Optional[float] = None
    records: List[MoleculeRecord] = Field(
        default_factory=list
    )
