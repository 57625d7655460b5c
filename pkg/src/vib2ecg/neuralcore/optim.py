import numpy as np


class Adam:
    """Adam with bias-corrected moments; moment buffers live on each Parameter."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        missing = [p.name for p in self.params if p.grad is None]
        if missing:
            raise RuntimeError(f"no gradient for {missing[:3]}...; call backward() before step()")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for p in self.params:
            g = p.grad
            p.m *= b1
            p.m += (1.0 - b1) * g
            p.v *= b2
            p.v += (1.0 - b2) * (g * g)
            mhat = p.m / c1
            vhat = p.v / c2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def adam_step(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, step=1):
    """Functional single update; ``step`` is the 1-based iteration number."""
    opt = Adam(params, lr, (beta1, beta2), eps)
    opt.step_count = step - 1
    opt.step()
    return opt.step_count
