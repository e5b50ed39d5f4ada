# src/networks/layers.py
"""Small composed blocks shared by the generator, discriminator and classifier."""
from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.networks.base_network import BaseNetwork


def conv_same(net: BaseNetwork, name: str, x: Tensor) -> Tensor:
    """Stride-1 convolution with symmetric zero padding (odd kernels keep the spatial size)."""
    w = net.params[f"{name}.weight"]
    b = net.params[f"{name}.bias"]
    return ops.conv2d(x, w, b, stride=1, pad=w.shape[2] // 2)


def batch_norm(net: BaseNetwork, name: str, x: Tensor) -> Tensor:
    return ops.normalize_batch(x, net.params[f"{name}.gamma"], net.params[f"{name}.beta"],
                               training=net.training, running=net.buffers[name])


def spade_norm(net: BaseNetwork, name: str, x: Tensor, condition: Tensor) -> Tensor:
    """SPADE; networks with batch_stats_at_inference keep per-sample statistics in eval mode too."""
    p = net.params
    modulation = ops.SpadeModulation(p[f"{name}.gamma.weight"], p[f"{name}.gamma.bias"],
                                     p[f"{name}.beta.weight"], p[f"{name}.beta.bias"])
    use_batch = net.training or getattr(net, "batch_stats_at_inference", False)
    running = net.buffers[name] if net.training else None
    return ops.normalize_spade(x, condition, modulation, training=use_batch, running=running)


def dense_head(net: BaseNetwork, name: str, x: Tensor) -> Tensor:
    return ops.dense(x, net.params[f"{name}.weight"], net.params[f"{name}.bias"])
