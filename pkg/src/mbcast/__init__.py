"""Buffer dimensioning and simulation for DASH delivered over broadcast with AL-FEC and HTTP repair."""

from .fec import (
    DomainError,
    ErasureChannel,
    RaptorCode,
    code_for_segment,
    decoder_failure_given_n,
    segment_loss_probability,
    symbols_received_pmf,
)
from .metrics import Severity, StallEvent, SummaryReport, UserReport, classify_severity, summarize, worst_percentile_loss
from .planner import (
    BufferPlan,
    DelayBudget,
    ServiceConfig,
    UnicastLink,
    UnsatisfiablePlan,
    availability_start_time,
    max_protected_burst,
    min_buffer,
    plan_buffer,
    plan_buffer_for_loss,
    playback_deadline,
    service_data_rate,
    sweep_code_rate,
)
from .simulator import Scenario, ScenarioError, UserSpec, run_scenario

__version__ = "0.1.0"
