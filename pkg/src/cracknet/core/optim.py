import numpy as np

from .params import LayerParams


class StaleGradientError(RuntimeError):
    pass


def adam_step(params: LayerParams, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Consumes and zeroes the gradients."""
    if not params.grads_fresh:
        raise StaleGradientError("adam_step called without fresh gradients; run a backward pass first")
    params.step_count += 1
    t = params.step_count
    dt = params.weights.dtype.type
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for w, g, m, v in ((params.weights, params.grad_weights, params.m_weights, params.v_weights),
                       (params.biases, params.grad_biases, params.m_biases, params.v_biases)):
        m *= dt(beta1)
        m += dt(1.0 - beta1) * g
        v *= dt(beta2)
        v += dt(1.0 - beta2) * (g * g)
        m_hat = m / dt(c1)
        v_hat = v / dt(c2)
        w -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))
    params.zero_grad()
