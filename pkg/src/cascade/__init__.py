"""Contractual cash-flow waterfalls over deterministic and simulated inflows."""

__version__ = "0.1.0"

from .engine import (  # noqa: E402
    PaymentMatrix,
    PeriodAllocation,
    allocate_period,
    allocate_pro_rata,
    allocate_sequential,
    run_scenarios,
    run_waterfall,
)
from .errors import CascadeError, ValidationError  # noqa: E402
from .inflows import (  # noqa: E402
    Event,
    InflowScenario,
    PoolSpec,
    Unit,
    aggregate_inflows,
    enumerate_scenarios,
    sample_scenario,
    sample_scenarios,
    unit_cashflow,
)
from .metrics import (  # noqa: E402
    DiscountCurve,
    build_report,
    cumulative_loss,
    expected_payments,
    loss_distribution,
    present_value,
    thickness_sensitivity,
)
from .structure import (  # noqa: E402
    ContractParams,
    Position,
    Rule,
    StructureSpec,
    StructureState,
    Tier,
    Trigger,
    derive_dues,
    evaluate_trigger,
    initial_state,
    validate_spec,
)
