"""liqstake: deterministic engine and scenario simulator for a
collateralised staking-liquidity incentive protocol.
"""

from .collateral import (
    AssetNotAdmissibleError,
    BorrowCeiling,
    CollateralQuote,
    QualificationRule,
    borrow_ceiling,
    collateral_rate,
    global_multiplier,
    loan_requote,
    qualify_asset,
    stake_ratio_check,
)
from .credits import CreditAccount, CreditBook, account_cap, asset_cap, consume, credit_budget, round_rollover
from .engine import EpochEvents, EpochReport, advance_epoch, advance_epoch_report, genesis_ledger
from .money import dec, q
from .rewards import (
    ControllerState,
    RewardPlan,
    allocate_rewards,
    capital_efficiency,
    capital_efficiency_fees,
    controller_update,
    dra_feasibility,
    epoch_reward_budget,
    max_lock_reward,
    moving_average_and_derivatives,
    pool_weight,
    present_value,
    tenure_incentive,
)
from .risk import (
    detect_wash_trades,
    expected_shortfall,
    liquidity_risk,
    objective_metrics,
    portfolio_variance,
    realized_volatility,
    target_weights,
)
from .sim import AgentSpec, AssetSpec, DemandSpec, Scenario, Trace, ValidatorSpec, agent_step, gen_prices, run
from .staking import (
    UnstakeTicket,
    Validator,
    accrue_staking_rewards,
    liveness_ceiling,
    liveness_probability_check,
    request_unstake,
    slash,
)
from .state import AssetId, EpochLedger, PriceBook, ProtocolParams, ReserveState, Trade, mark_to_market

__version__ = "0.1.0"
