"""Continuous-time GRU/LSTM cells integrated by explicit ODE solvers."""

from .cells import (GruParams, LstmParams, discrete_gru_step, discrete_lstm_step, gru_gates,
                    init_params, lstm_gates, ode_gru_field, ode_lstm_field)
from .data import Dataset, TimeSeries, gen_eight_curve, gen_spiral, gen_triknot, load_csv
from .odesolve import OdeState, SolverConfig, integrate
from .tensor import Tensor
from .training import TrainConfig, TrainReport, grad_check, train

__version__ = "0.1.0"
