from typing import Dict, List, Optional, Tuple

from sqlmodel import Field, SQLModel

# Scenario document. Every section has defaults so a scenario file only
# needs to state what differs from the presets.


class RectModel(SQLModel):
    x0: float
    y0: float
    x1: float
    y1: float


class DensityModel(SQLModel):
    rect: RectModel
    density: float  # users per square meter


class CoverageModel(SQLModel):
    area_preset: Optional[str] = None  # stadium, district, highway
    area: List[RectModel] = Field(default_factory=list)
    users: Optional[float] = None  # spread uniformly over the area
    density: List[DensityModel] = Field(default_factory=list)
    rate_up: Optional[float] = None  # bps per user
    rate_down: Optional[float] = None
    cell_w: float = 90.0
    cell_h: float = 103.0


class SrdNodeModel(SQLModel):
    id: str
    compute: float = 0.0
    storage: float = 0.0
    min_compute: float = 0.0
    min_storage: float = 0.0
    radio: bool = False


class SrdLinkModel(SQLModel):
    src: str
    dst: str
    bandwidth: float


class SliceEntry(SQLModel):
    id: Optional[str] = None
    preset: Optional[str] = None  # slice1, slice2, slice3
    count: int = 1
    nodes: List[SrdNodeModel] = Field(default_factory=list)
    links: List[SrdLinkModel] = Field(default_factory=list)
    coverage: Optional[CoverageModel] = None


class LevelCapsModel(SQLModel):
    compute: float = 0.0
    storage: float = 0.0
    bandwidth: float = 0.0
    loopback: float = 0.0
    link_cost: float = 1.0
    loopback_cost: float = 0.0


class RrhCapsModel(SQLModel):
    rb_capacity: float = 100.0
    compute: float = 0.0
    storage: float = 0.0
    loopback: float = 0.0
    loopback_cost: float = 0.0


class CostRowModel(SQLModel):
    fixed: float = 0.0
    compute: float = 1.0
    storage: float = 1.0
    rb: float = 0.0


class FatTreeModel(SQLModel):
    k: int
    levels: Dict[str, LevelCapsModel]
    rrh: RrhCapsModel = Field(default_factory=RrhCapsModel)
    rrh_positions: List[Tuple[float, float]] = Field(default_factory=list)
    rrh_csv: Optional[str] = None  # lat,lon rows, relative to the scenario file
    origin: Optional[Tuple[float, float]] = None  # (lat, lon) of the scenario frame
    costs: Dict[str, CostRowModel] = Field(default_factory=dict)  # keyed by node kind


class InfraNodeModel(SQLModel):
    id: str
    kind: str = "cloud"
    compute: float = 0.0
    storage: float = 0.0
    rb_capacity: float = 0.0
    position: Optional[Tuple[float, float]] = None
    fixed_cost: Optional[float] = None  # None takes the cost table row of the kind
    compute_cost: Optional[float] = None
    storage_cost: Optional[float] = None
    rb_cost: Optional[float] = None


class InfraLinkModel(SQLModel):
    src: str
    dst: str
    bandwidth: float
    unit_cost: float = 1.0
    bidirectional: bool = False


class ExplicitTopologyModel(SQLModel):
    nodes: List[InfraNodeModel]
    links: List[InfraLinkModel] = Field(default_factory=list)


class InfrastructureModel(SQLModel):
    fat_tree: Optional[FatTreeModel] = None
    explicit: Optional[ExplicitTopologyModel] = None


class RadioParamsModel(SQLModel):
    rb_bandwidth: float = 0.2e6
    carrier_freq: float = 2.6
    tx_power_down: float = 43.0
    tx_gain_down: float = 15.0
    tx_power_up: float = 23.0
    tx_gain_up: float = 3.0
    rx_gain_down: float = 3.0
    rx_gain_up: float = 15.0
    noise_density: float = -174.0
    alpha: float = 3.6
    beta: float = 7.6
    gamma: float = 2.0
    conservatism: str = "center"


class SolverModel(SQLModel):
    backend: Optional[str] = None
    time_limit: Optional[float] = None
    mip_gap: Optional[float] = None
    seed: Optional[int] = None
    threads: Optional[int] = None
    epsilon: Optional[float] = None


class EmbeddingModel(SQLModel):
    slice: str
    sfc_counts: List[int] = Field(default_factory=lambda: [2, 4, 6, 8, 10])
    instances_per_srd: int = 10
    variant: str = "JR-JN"


class ScenarioDocument(SQLModel):
    name: str = "scenario"
    infrastructure: InfrastructureModel
    radio: RadioParamsModel = Field(default_factory=RadioParamsModel)
    slices: List[SliceEntry] = Field(default_factory=list)
    total_slices: Optional[int] = None
    variants: List[str] = Field(default_factory=lambda: ["JRN", "SR-SN", "SR-JN", "JR-SN", "JR-JN"])
    rate_discount: float = 0.0
    delta_scaling: bool = False
    solver: SolverModel = Field(default_factory=SolverModel)
    output_dir: Optional[str] = None
    embedding: Optional[EmbeddingModel] = None


# Solution document: one per (scenario, variant) run, flat entry lists.
# Solve times live in timings.csv only, so reruns write identical files.


class EtaEntry(SQLModel):
    slice: str
    rrh: str
    cell: int
    direction: str
    value: float


class PhiEntry(SQLModel):
    slice: str
    node: str
    vnf: str
    resource: str
    value: float
    instances: int


class LinkShareEntry(SQLModel):
    slice: str
    src: str
    dst: str
    vnf_src: str
    vnf_dst: str
    value: float


class ServedEntry(SQLModel):
    slice: str
    node: str
    vnf: str
    value: float


class UsedEntry(SQLModel):
    slice: str
    node: str
    layer: str  # radio or wired


class RecordEntry(SQLModel):
    stage: str
    slices: List[str]
    status: str
    variables: int
    constraints: int
    objective: float


class CostsEntry(SQLModel):
    radio: float
    wired: float
    total: float
    radio_by_slice: Dict[str, float] = Field(default_factory=dict)
    wired_by_slice: Dict[str, float] = Field(default_factory=dict)


class SolutionDocument(SQLModel):
    scenario: str
    variant: str
    rate_discount: float
    delta: float = 1.0
    slice_order: List[str]
    eta: List[EtaEntry] = Field(default_factory=list)
    phi: List[PhiEntry] = Field(default_factory=list)
    link_shares: List[LinkShareEntry] = Field(default_factory=list)
    served: List[ServedEntry] = Field(default_factory=list)
    used: List[UsedEntry] = Field(default_factory=list)
    costs: CostsEntry
    records: List[RecordEntry] = Field(default_factory=list)
