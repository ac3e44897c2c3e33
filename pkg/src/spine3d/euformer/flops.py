def flops_attention(h: int, w: int, c: int, heads: int, mode: str = "channel") -> int:
    """Multiply-accumulates of the two attention matmuls for one feature map.

    ``channel`` builds a d x d map per head (d = c / heads); ``spatial`` is
    the conventional hw x hw map used for comparison.
    """
    if heads < 1 or c % heads:
        raise ValueError(f"heads={heads} must divide c={c}")
    hw = h * w
    if mode == "channel":
        return 2 * c * c * hw // heads
    if mode == "spatial":
        return 2 * hw * hw * c // heads
    raise ValueError(f"mode must be 'channel' or 'spatial', got {mode!r}")
