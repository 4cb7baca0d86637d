"""hydronmpc: learned multi-step predictors and sampled-data NMPC for a
hydraulic excavator surrogate.

Subpackages/modules:

- ``nn``        -- minimal float64 MLP/LSTM layers, Adam/SGD, gradient checks
- ``_kernels``  -- compiled (Cython) or pure numpy hot kernels
- ``dataset``   -- episode storage, CSV I/O, window extraction, normalization
- ``ssmp``      -- single-shot multi-step predictor (LSTM encoder + MLP head)
- ``residual``  -- online residual model and hybrid predictor
- ``plant``     -- surrogate excavator hydraulics, PID, safety checks
- ``nmpc``      -- gradient-descent NMPC with gear selection
- ``metrics``   -- RMSE/ARMSE, energy efficiency, flop counts
- ``udp``       -- 50 Hz UDP control loop (serve/drive)
- ``cli``       -- command-line entry point
"""

__version__ = "0.1.0"
