"""Neural depth field: multi-resolution hash encoding into a sinusoidal MLP.

The field maps a pixel coordinate to depth z = z0 + s * raw(p).  Evaluation
returns z together with its analytic spatial gradient (dz/du, dz/dv) in
mm/pixel: the gradient is propagated symbolically alongside the value
through every layer (interpolation weights, sine activations), so it is
exact inside each encoding cell and itself differentiable with respect to
the parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry
from .errors import DomainError

log = logging.getLogger(__name__)

# Spatial hash multipliers (fixed odd constants); the first dimension is
# indexed directly, the second is scrambled before the XOR combine.
HASH_MULTIPLIERS = (1, 2654435761)


@dataclass(frozen=True)
class HashEncodingConfig:
    levels: int = 8
    features_per_level: int = 2
    table_size: int = 2**15
    base_resolution: int = 16
    growth_factor: float = 1.5
    init_scale: float = 1e-4

    @property
    def output_dim(self):
        return self.levels * self.features_per_level

    def resolution(self, level):
        """Number of cells per axis at `level`."""
        return int(np.floor(self.base_resolution * self.growth_factor**level))


@dataclass
class EncodingCache:
    """Precomputed gather indices and cell fractions for a fixed pixel set.

    Pixels never move during optimization, so the corner lookups and
    interpolation fractions can be computed once and sliced per batch.
    """

    corner_index: tuple  # four (N, L) int arrays: 00, 10, 01, 11
    tx: np.ndarray  # (N, L)
    ty: np.ndarray  # (N, L)

    def subset(self, rows):
        return EncodingCache(
            corner_index=tuple(ci[rows] for ci in self.corner_index),
            tx=self.tx[rows],
            ty=self.ty[rows],
        )


class HashEncoding:
    """Learnable multi-resolution feature grid over [0, 1]^2.

    All levels share one parameter array of shape (levels * table_size,
    features); level ``l`` owns rows [l * table_size, (l+1) * table_size).
    """

    def __init__(self, config=HashEncodingConfig(), prefix="surface.enc"):
        self.config = config
        self.prefix = prefix
        self.resolutions = np.array(
            [config.resolution(level) for level in range(config.levels)], dtype=np.int64
        )
        self._offsets = np.arange(config.levels, dtype=np.int64) * config.table_size

    @property
    def table_name(self):
        return f"{self.prefix}.table"

    def param_names(self):
        return [self.table_name]

    def init_params(self, rng):
        c = self.config
        shape = (c.levels * c.table_size, c.features_per_level)
        return {self.table_name: rng.uniform(-c.init_scale, c.init_scale, size=shape)}

    def vertex_index(self, i, j):
        """Hash grid vertices (i, j), both (N, L), into per-level table rows."""
        m0, m1 = HASH_MULTIPLIERS
        h = (i.astype(np.uint64) * np.uint64(m0)) ^ (j.astype(np.uint64) * np.uint64(m1))
        local = (h % np.uint64(self.config.table_size)).astype(np.int64)
        return local + self._offsets[None, :]

    def level_slice(self, params, level):
        """Feature table of one level, view (table_size, features)."""
        c = self.config
        return ad.value_of(params[self.table_name])[
            level * c.table_size : (level + 1) * c.table_size
        ]

    def prepare(self, xn, yn):
        """Indices and fractions for fixed (ndarray) normalized coordinates."""
        xv = np.asarray(ad.value_of(xn), dtype=np.float64)
        yv = np.asarray(ad.value_of(yn), dtype=np.float64)
        res = self.resolutions.astype(np.float64)[None, :]
        sx = xv[:, None] * res
        sy = yv[:, None] * res
        i0 = np.clip(np.floor(sx), 0, res - 1).astype(np.int64)
        j0 = np.clip(np.floor(sy), 0, res - 1).astype(np.int64)
        corner_index = (
            self.vertex_index(i0, j0),
            self.vertex_index(i0 + 1, j0),
            self.vertex_index(i0, j0 + 1),
            self.vertex_index(i0 + 1, j0 + 1),
        )
        return EncodingCache(corner_index=corner_index, tx=sx - i0, ty=sy - j0)

    def encode(self, params, xn, yn, with_tangents=True, cache=None):
        """Features of normalized coordinates, optionally with d/dxn, d/dyn.

        Returns (e, ex, ey): e is (N, levels * features); ex/ey are the
        per-axis derivatives (None when `with_tangents` is False).  Inputs
        outside [0, 1]^2 are clamped with a logged warning.  Passing a
        `cache` from `prepare` skips the index computation; differentiating
        with respect to the coordinates requires Var inputs and no cache.
        """
        c = self.config
        differentiable_input = isinstance(xn, ad.Var) or isinstance(yn, ad.Var)
        if cache is None:
            xv = np.asarray(ad.value_of(xn), dtype=np.float64)
            yv = np.asarray(ad.value_of(yn), dtype=np.float64)
            if np.any(xv < 0) or np.any(xv > 1) or np.any(yv < 0) or np.any(yv > 1):
                log.warning("hash encoding input outside [0,1]^2; clamping")
                if differentiable_input:
                    raise DomainError("differentiable encoding requires in-domain input")
                xn = np.clip(xv, 0.0, 1.0)
                yn = np.clip(yv, 0.0, 1.0)
            cache = self.prepare(xn, yn)
            if differentiable_input:
                # rebuild the fractions from the Var inputs so gradients flow;
                # subtracting (value(s) - fraction) subtracts exactly the cell origin
                res = self.resolutions.astype(np.float64)[None, :]
                sx = ad.reshape(xn, (-1, 1)) * res
                sy = ad.reshape(yn, (-1, 1)) * res
                tx = sx - (ad.value_of(sx) - cache.tx)
                ty = sy - (ad.value_of(sy) - cache.ty)
            else:
                tx, ty = cache.tx, cache.ty
        else:
            if differentiable_input:
                raise DomainError("encoding cache cannot be combined with Var coordinates")
            tx, ty = cache.tx, cache.ty

        table = params[self.table_name]
        f00 = ad.take(table, cache.corner_index[0])
        f10 = ad.take(table, cache.corner_index[1])
        f01 = ad.take(table, cache.corner_index[2])
        f11 = ad.take(table, cache.corner_index[3])

        n = cache.tx.shape[0]
        txc = ad.reshape(tx, (n, -1, 1))
        tyc = ad.reshape(ty, (n, -1, 1))
        dx_lin = f10 - f00
        lerp_y0 = f00 + txc * dx_lin
        lerp_y1 = f01 + txc * (f11 - f01)
        e = lerp_y0 + tyc * (lerp_y1 - lerp_y0)

        width = c.levels * c.features_per_level
        if not with_tangents:
            return ad.reshape(e, (n, width)), None, None
        res_col = self.resolutions.astype(np.float32)[None, :, None]
        ex = res_col * (dx_lin + tyc * ((f11 - f01) - dx_lin))
        ey = res_col * ((f01 - f00) + txc * ((f11 - f10) - (f01 - f00)))
        return (
            ad.reshape(e, (n, width)),
            ad.reshape(ex, (n, width)),
            ad.reshape(ey, (n, width)),
        )


@dataclass(frozen=True)
class SirenConfig:
    hidden_layers: int = 3
    width: int = 64
    omega0: float = 30.0
    output_scale: float = 0.01


class SirenMLP:
    """Sine-activated MLP with a linear scalar output head.

    The first layer applies sin(omega0 * (W x + b)); deeper hidden layers
    use unit frequency.  The output head is down-scaled at init so a fresh
    network stays near zero.
    """

    def __init__(self, in_dim, config=SirenConfig(), prefix="surface.mlp"):
        self.in_dim = in_dim
        self.config = config
        self.prefix = prefix

    def param_names(self):
        names = []
        for i in range(self.config.hidden_layers + 1):
            names += [f"{self.prefix}.w{i}", f"{self.prefix}.b{i}"]
        return names

    def init_params(self, rng):
        c = self.config
        params = {}
        fan_in = self.in_dim
        for i in range(c.hidden_layers):
            if i == 0:
                bound = 1.0 / fan_in
            else:
                bound = np.sqrt(6.0 / fan_in)
            params[f"{self.prefix}.w{i}"] = rng.uniform(-bound, bound, size=(fan_in, c.width))
            params[f"{self.prefix}.b{i}"] = rng.uniform(
                -1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=(c.width,)
            )
            fan_in = c.width
        i = c.hidden_layers
        bound = np.sqrt(6.0 / fan_in) * c.output_scale
        params[f"{self.prefix}.w{i}"] = rng.uniform(-bound, bound, size=(fan_in, 1))
        params[f"{self.prefix}.b{i}"] = np.zeros((1,))
        return params

    def forward(self, params, e, ex=None, ey=None):
        """Scalar output (N,) and, when tangents are given, its derivatives."""
        c = self.config
        with_tangents = ex is not None
        h, hx, hy = e, ex, ey
        for i in range(c.hidden_layers):
            w = params[f"{self.prefix}.w{i}"]
            b = params[f"{self.prefix}.b{i}"]
            omega = c.omega0 if i == 0 else 1.0
            a = h @ w + b
            h = ad.sin(omega * a)
            if with_tangents:
                slope = omega * ad.cos(omega * a)
                hx = slope * (hx @ w)
                hy = slope * (hy @ w)
        i = c.hidden_layers
        w = params[f"{self.prefix}.w{i}"]
        b = params[f"{self.prefix}.b{i}"]
        out = ad.reshape(h @ w + b, (-1,))
        if not with_tangents:
            return out, None, None
        return out, ad.reshape(hx @ w, (-1,)), ad.reshape(hy @ w, (-1,))


@dataclass(frozen=True)
class DepthFieldConfig:
    encoding: HashEncodingConfig = HashEncodingConfig()
    siren: SirenConfig = SirenConfig()
    depth_offset_mm: float = geometry.WORKING_DISTANCE_MM
    depth_scale_mm: float = 5.0
    depth_floor_mm: float = 1e-3


class DepthField:
    """Pixel -> depth field bound to one camera's pixel rectangle.

    The pixel -> [0,1]^2 map always uses the full image rectangle so the
    encoding's spatial metric stays uniform regardless of masking.
    """

    def __init__(self, cam, config=DepthFieldConfig()):
        self.cam = cam
        self.config = config
        self.encoding = HashEncoding(config.encoding)
        self.mlp = SirenMLP(config.encoding.output_dim, config.siren)

    def init_params(self, rng):
        params = {}
        params.update(self.encoding.init_params(rng))
        params.update(self.mlp.init_params(rng))
        return params

    def param_names(self):
        return self.encoding.param_names() + self.mlp.param_names()

    def normalized_coords(self, u, v):
        """Centered pixel coordinates -> [0,1]^2 (full image rectangle)."""
        cam = self.cam
        xn = (u + (cam.cx + 0.5)) / float(cam.width)
        yn = (v + (cam.cy + 0.5)) / float(cam.height)
        return xn, yn

    def prepare(self, u, v):
        """Encoding cache for a fixed pixel set (see EncodingCache)."""
        xn, yn = self.normalized_coords(np.asarray(u), np.asarray(v))
        return self.encoding.prepare(xn, yn)

    def depth(self, params, u, v, with_tangents=True, cache=None):
        """Depth z (mm) and its gradient (dz/du, dz/dv) in mm/pixel.

        Depth values below the positivity floor are clamped (with the
        gradient passed straight through); callers count clamp events by
        comparing the returned values against the floor.
        """
        c = self.config
        xn, yn = self.normalized_coords(u, v)
        e, ex, ey = self.encoding.encode(params, xn, yn, with_tangents=with_tangents, cache=cache)
        raw, raw_x, raw_y = self.mlp.forward(params, e, ex, ey)
        z = ad.clamp_floor_passthrough(c.depth_offset_mm + c.depth_scale_mm * raw, c.depth_floor_mm)
        if not with_tangents:
            return z, None, None
        # chain through pixel -> [0,1]^2 (tangents above are per unit xn/yn)
        gu = (c.depth_scale_mm / self.cam.width) * raw_x
        gv = (c.depth_scale_mm / self.cam.height) * raw_y
        return z, gu, gv

    def normal(self, params, u, v):
        """Unit normal at pixels (u, v): depth composed with the camera model."""
        z, gu, gv = self.depth(params, u, v)
        return geometry.normal_from_depth(self.cam, u, v, z, gu, gv)

    def depth_map(self, params, dtype=np.float32):
        """Full-resolution depth map (H, W) and gradients, non-differentiable."""
        u, v = self.cam.pixel_grid()
        z, gu, gv = self.depth(
            {k: np.asarray(p, dtype=dtype) for k, p in params.items()},
            u.ravel().astype(dtype),
            v.ravel().astype(dtype),
        )
        shape = (self.cam.height, self.cam.width)
        return z.reshape(shape), gu.reshape(shape), gv.reshape(shape)

    def normal_map(self, params, dtype=np.float32):
        """Full-resolution normal map (H, W, 3), non-differentiable."""
        u, v = self.cam.pixel_grid()
        uf = u.ravel().astype(dtype)
        vf = v.ravel().astype(dtype)
        nx, ny, nz = self.normal({k: np.asarray(p, dtype=dtype) for k, p in params.items()}, uf, vf)
        vectors = np.stack([nx, ny, nz], axis=-1).reshape(self.cam.height, self.cam.width, 3)
        return geometry.NormalMap(vectors)
