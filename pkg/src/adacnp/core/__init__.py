from adacnp.core.autodiff import Tape, Var, backward
from adacnp.core.linalg import as_matrix, matmul
from adacnp.core.mlp import MlpParams, init_mlp, mlp_forward
from adacnp.core.optim import AdamState, optimizer_step

__all__ = [
    "Tape", "Var", "backward", "as_matrix", "matmul",
    "MlpParams", "init_mlp", "mlp_forward", "AdamState", "optimizer_step",
]
