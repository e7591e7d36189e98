"""Residual gait control: a conditional motion prior corrected by a learned residual policy.

The package is organised as a plain numpy library:

- ``numerics``  small symmetric linear algebra and seeded random streams
- ``nets``      dense networks (MLP / LSTM) with exact reverse-mode gradients and Adam
- ``dataset``   procedural gait clips, mirroring, normalisation, weighted sampling
- ``cmg``       the mixture-of-experts autoregressive motion generator
- ``env``       deterministic planar-biped simulator with PD actuation and contacts
- ``rewards``   imitation / task / regularisation reward stack
- ``ppo``       clipped-surrogate policy optimisation with an asymmetric critic
- ``metrics``   distribution distance, reconstruction and tracking metrics
- ``config``    the single run configuration with hashing and YAML round-trip
- ``cli``       operator entry points (synth-data, train-cmg, train-policy, eval, ...)
"""

__version__ = "0.1.0"
