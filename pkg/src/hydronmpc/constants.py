"""Shared dimensional constants for the excavator control stack."""

DT = 0.02            # control/sample period (s), 50 Hz loop
N_STATE = 9          # [q, qd, qdd] x 3 joints
N_INPUT = 4          # [u_swing, u_boom, u_arm, omega_engine]
N_JOINT = 3          # swing, boom, arm
JOINT_NAMES = ("swing", "boom", "arm")

# Column order of episode CSV files.
CSV_COLUMNS = (
    "t",
    "q_swing", "q_boom", "q_arm",
    "qd_swing", "qd_boom", "qd_arm",
    "qdd_swing", "qdd_boom", "qdd_arm",
    "u_swing", "u_boom", "u_arm",
    "omega",
)
