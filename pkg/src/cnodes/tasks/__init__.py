"""Datasets, analytic references and the desk-scale experiments."""

from cnodes.tasks.burgers import (
    BurgersDemo,
    breaking_time,
    burgers_characteristics,
    crossings,
    first_crossing,
    moc_integrate,
)
from cnodes.tasks.data import (
    PdeRegressionTask,
    TimeSeriesTask,
    ToyTask2D,
    analytic_u,
    gen_pde_dataset,
    gen_timeseries,
    gen_toy2d,
    percent_deviation,
    write_csv,
)
from cnodes.tasks.pde import NodePdeNet, PdeFitConfig, PdeNets, fixed_point, node_pde_baseline, pde_fit
from cnodes.tasks.timeseries import TimeSeriesConfig, timeseries_eval

__all__ = [
    "BurgersDemo", "burgers_characteristics", "moc_integrate", "crossings", "first_crossing", "breaking_time",
    "PdeRegressionTask", "TimeSeriesTask", "ToyTask2D", "analytic_u", "gen_pde_dataset", "gen_timeseries",
    "gen_toy2d", "percent_deviation", "write_csv",
    "PdeNets", "NodePdeNet", "PdeFitConfig", "pde_fit", "node_pde_baseline", "fixed_point",
    "TimeSeriesConfig", "timeseries_eval",
]
