"""Small convolutional building blocks shared by the MD module and the network."""

import torch
from torch import nn


def conv3x3(c_in, c_out, bias=True):
    return nn.Conv2d(c_in, c_out, 3, padding=1, bias=bias)


class ConvPReLU(nn.Sequential):
    def __init__(self, c_in, c_out):
        super().__init__(conv3x3(c_in, c_out), nn.PReLU(init=0.25))


class InitialBlock(nn.Sequential):
    """Two stacked 3x3 conv + PReLU units mapping RGB to ``c_base`` features."""

    def __init__(self, c_base, c_img=3):
        super().__init__(ConvPReLU(c_img, c_base), ConvPReLU(c_base, c_base))


class ChannelAttention(nn.Module):
    """Squeeze-excitation gate: ``x * sigmoid(W2 relu(W1 avgpool(x))))``."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.squeeze = nn.Conv2d(channels, hidden, 1)
        self.excite = nn.Conv2d(hidden, channels, 1)

    def gate(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.excite(torch.relu(self.squeeze(s))))

    def forward(self, x):
        return x * self.gate(x)


class BST(nn.Module):
    """Residual unit ``x + conv(prelu(conv(x)))``."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.act = nn.PReLU(init=0.25)
        self.conv2 = conv3x3(channels, channels)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class PlainUnetBlock(nn.Sequential):
    # Baseline body for the plain-U-Net ablation: no attention, no residual.
    def __init__(self, channels):
        super().__init__(ConvPReLU(channels, channels), ConvPReLU(channels, channels))
