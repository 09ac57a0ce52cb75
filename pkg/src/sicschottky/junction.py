"""2-D electrostatics of the stripe Schottky contact.

Solves the nonlinear Poisson equation div(eps grad phi) = -q (Nd+ - n) on a
tensor-product finite-volume mesh of the device cross-section (x lateral,
z depth from the surface). Electrons follow Boltzmann statistics referenced
to a flat Fermi level pinned by the ohmic back contact; the applied bias
only moves the metal Fermi level, which is a good approximation while the
reverse current is negligible. Donors are fully ionized by default (see
``solve_poisson``); incomplete ionization is available behind a flag.

Potential reference: phi = 0 in the neutral substrate at the ohmic contact.
The conduction band edge is then Ec(x) = Ec0 - phi(x) with Ec0 the bulk
band depth below the Fermi level, and

    n(phi)  = Nc exp((phi - Ec0)/kT)
    phi_schottky = Ec0 - Phi_B + U_bias      (Phi_B = workfunction - affinity)

Newton iteration is damped by an Armijo line search on the scaled residual
norm; bias is ramped adaptively from the flat-band point, so large reverse
voltages at kT ~ 1 meV converge without hand-tuned initial guesses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import CONSTANTS, Layer, MaterialStack, PhysicalConstants, equilibrium_bulk_density, thermal_voltage

__all__ = [
    "Mesh2D",
    "DefectSite",
    "ConvergenceReport",
    "FieldSolution",
    "build_device_mesh",
    "solve_poisson",
    "depletion_boundary",
    "depleted_area_um2",
    "depletion_voltage",
    "field_at",
    "charge_balance",
    "iv_curve",
    "forward_voltage",
]

EXP_CLAMP = 200.0  # exponent clamp for Boltzmann factors, in thermal units


@dataclass(frozen=True)
class Mesh2D:
    """Tensor-product mesh of the cross-section.

    ``x_um`` runs laterally (strictly increasing), ``z_um`` is the depth
    from the top surface (z=0). The Schottky stripe occupies the top-row
    nodes within ``contact_x_um``; the whole bottom row is the ohmic back
    contact; every other boundary node is a zero-flux (Neumann) node.
    """

    x_um: np.ndarray
    z_um: np.ndarray
    contact_x_um: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "x_um", np.asarray(self.x_um, dtype=float))
        object.__setattr__(self, "z_um", np.asarray(self.z_um, dtype=float))
        if self.x_um.ndim != 1 or self.z_um.ndim != 1:
            raise ValueError("mesh coordinates must be 1-D arrays")
        if self.x_um.size < 1 or self.z_um.size < 2:
            raise ValueError("mesh needs at least 1 lateral and 2 depth nodes")
        if self.x_um.size > 1 and not np.all(np.diff(self.x_um) > 0):
            raise ValueError("x coordinates must be strictly increasing")
        if not np.all(np.diff(self.z_um) > 0):
            raise ValueError("z coordinates must be strictly increasing")
        c0, c1 = self.contact_x_um
        if not c1 > c0:
            raise ValueError("contact extent must have positive width")
        if not self.schottky_mask().any():
            raise ValueError("no top-boundary node inside the contact stripe")

    @property
    def nx(self) -> int:
        return self.x_um.size

    @property
    def nz(self) -> int:
        return self.z_um.size

    def schottky_mask(self) -> np.ndarray:
        """Boolean (nz, nx) mask of Schottky Dirichlet nodes."""
        c0, c1 = self.contact_x_um
        mask = np.zeros((self.nz, self.nx), dtype=bool)
        tol = 1e-9
        mask[0, :] = (self.x_um >= c0 - tol) & (self.x_um <= c1 + tol)
        return mask

    def ohmic_mask(self) -> np.ndarray:
        """Boolean (nz, nx) mask of ohmic Dirichlet nodes (bottom row)."""
        mask = np.zeros((self.nz, self.nx), dtype=bool)
        mask[-1, :] = True
        return mask

    def node_widths_um(self) -> tuple[np.ndarray, np.ndarray]:
        """Control-volume extents (wx, wz) per node, in um."""
        return _control_widths(self.x_um), _control_widths(self.z_um)


def _control_widths(coords: np.ndarray) -> np.ndarray:
    if coords.size == 1:
        return np.array([1.0])  # arbitrary unit width, scales out of the solution
    w = np.empty_like(coords)
    w[1:-1] = 0.5 * (coords[2:] - coords[:-2])
    w[0] = 0.5 * (coords[1] - coords[0])
    w[-1] = 0.5 * (coords[-1] - coords[-2])
    return w


@dataclass(frozen=True)
class DefectSite:
    """Color-center position relative to the contact: lateral distance from
    the stripe edge (positive = outside the contact) and depth from the
    surface, both in um."""

    lateral_distance_from_contact_edge_um: float
    depth_um: float

    def validate(self, stack: MaterialStack) -> None:
        if not 0 < self.depth_um < stack.epi_thickness:
            raise ValueError(
                f"defect depth {self.depth_um} um must lie inside the epilayer "
                f"(0, {stack.epi_thickness}) um"
            )

    def position_um(self, stack: MaterialStack) -> tuple[float, float]:
        """Absolute (x, z) mesh coordinates of the site."""
        return (
            stack.contact.x_max_um + self.lateral_distance_from_contact_edge_um,
            self.depth_um,
        )


@dataclass
class ConvergenceReport:
    iterations: int = 0
    continuation_steps: int = 0
    residual: float = math.inf
    converged: bool = False
    edge_resolution_warning: bool = False


@dataclass
class FieldSolution:
    """Converged electrostatic state on the mesh.

    ``phi_V``, ``n_cm3`` and ``nd_plus_cm3`` are nodal arrays of shape
    (nz, nx); the field components are cell-centered arrays of shape
    (nz-1, nx-1) in MV/m, with Ex lateral and Ez along the depth axis.
    """

    mesh: Mesh2D
    stack: MaterialStack
    bias_V: float
    temperature_K: float
    phi_V: np.ndarray
    n_cm3: np.ndarray
    nd_plus_cm3: np.ndarray
    Ex_MVm: np.ndarray
    Ez_MVm: np.ndarray
    report: ConvergenceReport = field(default_factory=ConvergenceReport)


def build_device_mesh(
    stack: MaterialStack,
    x_min_um: float = -40.0,
    x_max_um: float = 70.0,
    z_max_um: float = 30.0,
    nx: int = 160,
    nz: int = 90,
    epi_node_fraction: float = 0.7,
) -> Mesh2D:
    """Mesh the cross-section with nodes pinned at the contact edges and at
    the epilayer/substrate interface; a fixed fraction of the depth nodes is
    spent on the epilayer where the depletion physics happens."""
    c0, c1 = stack.contact.x_min_um, stack.contact.x_max_um
    if not (x_min_um <= c0 < c1 <= x_max_um):
        raise ValueError("contact stripe must lie within the lateral extent")
    if z_max_um <= stack.epi_thickness:
        raise ValueError("mesh must extend below the epilayer")
    x = np.linspace(x_min_um, x_max_um, nx)
    x = np.unique(np.concatenate([x, [c0, c1]]))
    nz_epi = max(3, int(round(epi_node_fraction * nz)))
    nz_sub = max(3, nz - nz_epi)
    z_epi = np.linspace(0.0, stack.epi_thickness, nz_epi + 1)
    z_sub = np.linspace(stack.epi_thickness, z_max_um, nz_sub + 1)[1:]
    z = np.concatenate([z_epi, z_sub])
    return Mesh2D(x_um=x, z_um=z, contact_x_um=(c0, c1))


class _Assembly:
    """Precomputed mesh-dependent pieces of the discrete problem."""

    def __init__(self, stack: MaterialStack, mesh: Mesh2D, temperature: float,
                 incomplete_ionization: bool, constants: PhysicalConstants):
        self.stack = stack
        self.mesh = mesh
        self.kt = thermal_voltage(temperature, constants)  # eV; equals Vt in volts
        self.q = constants.elementary_charge
        eps = stack.static_relative_permittivity * constants.vacuum_permittivity
        self.incomplete = incomplete_ionization
        self.nc_m3 = stack.conduction_dos(temperature)
        self.g = stack.donor_degeneracy
        self.de_ion = stack.donor_ionization_energy

        nx, nz = mesh.nx, mesh.nz
        n_nodes = nx * nz
        x_m = mesh.x_um * 1e-6
        z_m = mesh.z_um * 1e-6
        wx_m = _control_widths(x_m)
        wz_m = _control_widths(z_m)
        if nx == 1:
            wx_m = np.array([1e-6])  # unit meter-per-um convention, scales out
        self.vol = np.outer(wz_m, wx_m).ravel()  # m^2 per unit stripe length

        # donor density per node (m^-3)
        zz = np.repeat(mesh.z_um, nx)
        nd_cm3 = np.where(zz < stack.epi_thickness, stack.doping_epi, stack.doping_substrate)
        self.nd_m3 = nd_cm3 * 1e6

        # Dirichlet masks and face conductances eps * w_perp / d (F per unit length)
        self.schottky = mesh.schottky_mask().ravel()
        self.ohmic = mesh.ohmic_mask().ravel()
        self.dirichlet = self.schottky | self.ohmic

        # face lists (node a, node b, conductance)
        face_a, face_b, face_c = [], [], []
        if nx > 1:
            kk, jj = np.meshgrid(np.arange(nz), np.arange(nx - 1), indexing="ij")
            a = (kk * nx + jj).ravel()
            c = (eps * wz_m[kk] / (x_m[jj + 1] - x_m[jj])).ravel()
            face_a.append(a)
            face_b.append(a + 1)
            face_c.append(c)
        kk, jj = np.meshgrid(np.arange(nz - 1), np.arange(nx), indexing="ij")
        a = (kk * nx + jj).ravel()
        c = (eps * wx_m[jj] / (z_m[kk + 1] - z_m[kk])).ravel()
        face_a.append(a)
        face_b.append(a + nx)
        face_c.append(c)
        fa = np.concatenate(face_a)
        fb = np.concatenate(face_b)
        fc = np.concatenate(face_c)

        diag = np.zeros(n_nodes)
        np.add.at(diag, fa, -fc)
        np.add.at(diag, fb, -fc)
        self.sum_c = -diag

        rows = np.concatenate([fa, fb])
        cols = np.concatenate([fb, fa])
        vals = np.concatenate([fc, fc])
        keep = ~self.dirichlet[rows]
        free_idx = np.flatnonzero(~self.dirichlet)
        d_idx = np.flatnonzero(self.dirichlet)
        rows = np.concatenate([rows[keep], free_idx, d_idx])
        cols = np.concatenate([cols[keep], free_idx, d_idx])
        vals = np.concatenate([vals[keep], diag[free_idx], np.ones(d_idx.size)])
        self.laplacian = sp.csr_matrix(
            (vals, (rows, cols)), shape=(n_nodes, n_nodes)
        )

        # band depth below the Fermi level in the neutral substrate (potential zero)
        self.ec0 = self._bulk_band_depth(Layer.SUBSTRATE, temperature)
        self.ec0_epi = self._bulk_band_depth(Layer.EPI, temperature)

        # residual scale: charge content of a control volume plus the smallest
        # potential increment the Laplacian can resolve
        self.scale = self.q * self.vol * np.maximum(self.nd_m3, 1.0) + self.sum_c * self.kt
        self.scale[self.dirichlet] = self.kt

    def _bulk_band_depth(self, layer: Layer, temperature: float) -> float:
        if self.incomplete:
            bulk = equilibrium_bulk_density(self.stack, layer, temperature)
            return -bulk.fermi_level_eV
        nd_m3 = self.stack.doping(layer) * 1e6
        return self.kt * math.log(self.nc_m3 / nd_m3)

    def electron_density(self, phi: np.ndarray) -> np.ndarray:
        u = np.clip((phi - self.ec0) / self.kt, -EXP_CLAMP, EXP_CLAMP)
        return self.nc_m3 * np.exp(u)

    def ionized_donors(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Ionized donor density and its derivative d(Nd+)/d(phi)."""
        if not self.incomplete:
            return self.nd_m3, np.zeros_like(phi)
        u = np.clip((phi + self.de_ion - self.ec0) / self.kt, -EXP_CLAMP, EXP_CLAMP)
        geu = self.g * np.exp(u)
        ndp = self.nd_m3 / (1.0 + geu)
        dndp = -self.nd_m3 * geu / (1.0 + geu) ** 2 / self.kt
        return ndp, dndp

    def boundary_values(self, bias_V: float) -> np.ndarray:
        bc = np.zeros(self.mesh.nx * self.mesh.nz)
        bc[self.schottky] = self.ec0 - self.stack.barrier_height + bias_V
        return bc

    def residual(self, phi: np.ndarray, bc: np.ndarray) -> np.ndarray:
        n = self.electron_density(phi)
        ndp, _ = self.ionized_donors(phi)
        f = self.laplacian.dot(phi) + self.q * self.vol * (ndp - n)
        f[self.dirichlet] = phi[self.dirichlet] - bc[self.dirichlet]
        return f

    def jacobian(self, phi: np.ndarray) -> sp.csr_matrix:
        n = self.electron_density(phi)
        u = (phi - self.ec0) / self.kt
        dn = np.where(np.abs(u) < EXP_CLAMP, n / self.kt, 0.0)
        _, dndp = self.ionized_donors(phi)
        dcharge = self.q * self.vol * (dndp - dn)
        dcharge[self.dirichlet] = 0.0
        return self.laplacian + sp.diags(dcharge)

    def flat_band_bias(self) -> float:
        """Bias at which the Schottky boundary equals the neutral epi
        potential, a trivially convergent continuation start point."""
        phi_epi = self.ec0 - self.ec0_epi
        return self.stack.barrier_height - self.ec0 + phi_epi

    def neutral_guess(self) -> np.ndarray:
        phi = np.full(self.mesh.nx * self.mesh.nz, self.ec0 - self.ec0_epi)
        zz = np.repeat(self.mesh.z_um, self.mesh.nx)
        phi[zz >= self.stack.epi_thickness] = 0.0
        return phi


def _newton(asm: _Assembly, phi: np.ndarray, bc: np.ndarray,
            tol: float, max_iter: int) -> tuple[np.ndarray, int, float, bool]:
    phi = phi.copy()
    phi[asm.dirichlet] = bc[asm.dirichlet]
    f = asm.residual(phi, bc)
    norm = np.max(np.abs(f / asm.scale))
    it = 0
    while norm > tol and it < max_iter:
        jac = asm.jacobian(phi)
        delta = spla.spsolve(jac.tocsc(), -f)
        lam, accepted = 1.0, False
        for _ in range(40):
            trial = phi + lam * delta
            f_trial = asm.residual(trial, bc)
            norm_trial = np.max(np.abs(f_trial / asm.scale))
            if norm_trial < (1.0 - 1e-4 * lam) * norm:
                phi, f, norm = trial, f_trial, norm_trial
                accepted = True
                break
            lam *= 0.5
        it += 1
        if not accepted:
            return phi, it, norm, False
    return phi, it, norm, norm <= tol


def solve_poisson(
    stack: MaterialStack,
    mesh: Mesh2D,
    bias_V: float,
    temperature_K: float,
    *,
    incomplete_ionization: bool = False,
    tol: float = 1e-8,
    max_iterations: int = 60,
    warm_start: Optional[FieldSolution] = None,
    constants: PhysicalConstants = CONSTANTS,
) -> FieldSolution:
    """Solve the junction electrostatics at one bias point.

    The solve ramps the bias adaptively from the flat-band point (or from
    ``warm_start``), so arbitrary reverse voltages converge at cryogenic
    temperatures. Raises ArithmeticError when Newton stalls even at the
    smallest continuation step.
    """
    if abs(bias_V) > 500.0:
        raise ValueError("bias magnitude limited to 500 V")
    asm = _Assembly(stack, mesh, temperature_K, incomplete_ionization, constants)

    report = ConvergenceReport()
    if warm_start is not None and warm_start.phi_V.size == mesh.nx * mesh.nz:
        current_bias = warm_start.bias_V
        phi = warm_start.phi_V.ravel().copy()
    else:
        current_bias = asm.flat_band_bias()
        phi = asm.neutral_guess()

    span = bias_V - current_bias
    step = math.copysign(min(2.0, max(0.25, abs(span) / 8.0)), span) if span != 0 else 0.0
    min_step = 1e-3

    while True:
        remaining = bias_V - current_bias
        if remaining == 0.0 and report.continuation_steps > 0:
            break
        if step == 0.0 or abs(remaining) <= abs(step):
            target = bias_V
        else:
            target = current_bias + step
        bc = asm.boundary_values(target)
        phi_new, its, norm, ok = _newton(asm, phi, bc, tol, max_iterations)
        report.iterations += its
        report.continuation_steps += 1
        if ok:
            phi, current_bias = phi_new, target
            report.residual = norm
            if its <= 6 and step != 0.0:
                step = math.copysign(min(abs(step) * 2.0, 25.0), step)
            if current_bias == bias_V:
                break
        else:
            if step == 0.0 or abs(step) <= min_step:
                raise ArithmeticError(
                    f"Poisson solve stalled at bias {target:.4f} V "
                    f"(residual {norm:.3e}, step {step:.4f} V)"
                )
            step = math.copysign(abs(step) / 4.0, step)

    report.converged = True
    nx, nz = mesh.nx, mesh.nz
    n_m3 = asm.electron_density(phi)
    ndp_m3, _ = asm.ionized_donors(phi)
    if np.isscalar(ndp_m3) or np.ndim(ndp_m3) == 0:
        ndp_m3 = np.broadcast_to(ndp_m3, phi.shape)
    phi2 = phi.reshape(nz, nx)
    n2 = (n_m3 * 1e-6).reshape(nz, nx)
    ndp2 = (np.asarray(ndp_m3) * 1e-6).reshape(nz, nx)

    # cell-centered field in MV/m (= V/um)
    if nx > 1:
        dphidx = (np.diff(phi2, axis=1) / np.diff(mesh.x_um)[None, :])
        ex = -0.5 * (dphidx[:-1, :] + dphidx[1:, :])
    else:
        ex = np.zeros((nz - 1, 0))
    dphidz = (np.diff(phi2, axis=0) / np.diff(mesh.z_um)[:, None])
    if nx > 1:
        ez = -0.5 * (dphidz[:, :-1] + dphidz[:, 1:])
    else:
        ez = -dphidz

    report.edge_resolution_warning = _edge_underresolved(mesh, stack, n2)
    return FieldSolution(
        mesh=mesh,
        stack=stack,
        bias_V=bias_V,
        temperature_K=temperature_K,
        phi_V=phi2,
        n_cm3=n2,
        nd_plus_cm3=ndp2,
        Ex_MVm=ex,
        Ez_MVm=ez,
        report=report,
    )


def _edge_underresolved(mesh: Mesh2D, stack: MaterialStack, n_cm3: np.ndarray) -> bool:
    """True when the depletion-to-neutral transition spans fewer than three
    mesh nodes in some epi column that contains a depleted node."""
    epi_rows = mesh.z_um < stack.epi_thickness
    nd = stack.doping_epi
    counts = []
    for j in range(mesh.nx):
        col = n_cm3[epi_rows, j]
        if not (col < 0.01 * nd).any() or not (col > 0.9 * nd).any():
            continue
        counts.append(int(((col > 0.01 * nd) & (col < 0.9 * nd)).sum()))
    return bool(counts) and min(counts) < 3


# ---------------------------------------------------------------------------
# contour extraction (marching squares on log density)

_EDGE_CORNERS = {0: (0, 1), 1: (1, 2), 2: (3, 2), 3: (0, 3)}
# corner order within a cell: 0=(k,j) 1=(k,j+1) 2=(k+1,j+1) 3=(k+1,j)


def _cell_segments(f: np.ndarray, k: int, j: int) -> list[tuple[int, int]]:
    corners = (f[k, j], f[k, j + 1], f[k + 1, j + 1], f[k + 1, j])
    idx = sum(1 << c for c in range(4) if corners[c] < 0)
    if idx in (0, 15):
        return []
    table = {
        1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)],
        6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)], 9: [(0, 3)],
        11: [(1, 3)], 12: [(1, 3)], 13: [(0, 1)], 14: [(3, 0)],
    }
    if idx in (5, 10):
        center = 0.25 * sum(corners)
        if idx == 5:  # corners 0 and 2 inside
            return [(3, 0), (1, 2)] if center >= 0 else [(3, 2), (1, 0)]
        return [(0, 1), (2, 3)] if center >= 0 else [(0, 3), (2, 1)]
    segs = table[idx]
    if idx in (11, 13, 14):  # mirrored variants share the same edge pair
        pass
    return segs


def depletion_boundary(
    solution: FieldSolution, threshold_cm3: float = 1e12
) -> list[np.ndarray]:
    """Contour polylines of n = threshold, as (N, 2) arrays of (x_um, z_um).

    Interpolation runs on log10(n), appropriate for a field spanning many
    decades. An empty list means no node sits below the threshold.
    """
    mesh = solution.mesh
    n = np.maximum(solution.n_cm3, 1e-30)
    if mesh.nx < 2:
        raise ValueError("contours need at least two lateral nodes")
    f = np.log10(n) - math.log10(threshold_cm3)
    f = np.where(f == 0.0, 1e-12, f)
    if not (f < 0).any() or not (f > 0).any():
        return []

    x, z = mesh.x_um, mesh.z_um
    segments = []
    for k in range(mesh.nz - 1):
        for j in range(mesh.nx - 1):
            pairs = _cell_segments(f, k, j)
            if not pairs:
                continue
            pts = {}
            for edge in {e for pair in pairs for e in pair}:
                ca, cb = _EDGE_CORNERS[edge]
                coords = [
                    (x[j], z[k]), (x[j + 1], z[k]),
                    (x[j + 1], z[k + 1]), (x[j], z[k + 1]),
                ]
                fvals = [f[k, j], f[k, j + 1], f[k + 1, j + 1], f[k + 1, j]]
                fa, fb = fvals[ca], fvals[cb]
                t = fa / (fa - fb)
                ax, az = coords[ca]
                bx, bz = coords[cb]
                pts[edge] = (ax + t * (bx - ax), az + t * (bz - az))
            for ea, eb in pairs:
                segments.append((pts[ea], pts[eb]))

    return _chain_segments(segments)


def _chain_segments(segments: list) -> list[np.ndarray]:
    def key(p):
        return (round(p[0], 9), round(p[1], 9))

    adjacency: dict = {}
    for a, b in segments:
        adjacency.setdefault(key(a), []).append((a, b))
        adjacency.setdefault(key(b), []).append((b, a))

    used = set()
    polylines = []
    endpoints = [k for k, v in adjacency.items() if len(v) == 1]
    seeds = endpoints + list(adjacency.keys())
    for seed in seeds:
        for start, nxt in adjacency.get(seed, []):
            if (key(start), key(nxt)) in used:
                continue
            line = [start, nxt]
            used.add((key(start), key(nxt)))
            used.add((key(nxt), key(start)))
            while True:
                tail = key(line[-1])
                options = [
                    b for a, b in adjacency.get(tail, [])
                    if (key(a), key(b)) not in used
                ]
                if not options:
                    break
                line.append(options[0])
                used.add((tail, key(options[0])))
                used.add((key(options[0]), tail))
            polylines.append(np.array(line))
    return polylines


def depleted_area_um2(solution: FieldSolution, threshold_cm3: float = 1e12) -> float:
    """Total control-volume area (um^2) of nodes below the density threshold."""
    wx, wz = solution.mesh.node_widths_um()
    areas = np.outer(wz, wx)
    return float(areas[solution.n_cm3 < threshold_cm3].sum())


def density_at(solution: FieldSolution, site: DefectSite) -> float:
    """Bilinear interpolation of the electron density (cm^-3) at a site,
    carried out on log10(n)."""
    x, z = site.position_um(solution.stack)
    logn = np.log10(np.maximum(solution.n_cm3, 1e-30))
    return 10.0 ** _bilinear(solution.mesh.x_um, solution.mesh.z_um, logn, x, z)


def field_at(solution: FieldSolution, site: DefectSite) -> tuple[float, float]:
    """Local field at a defect site as (E_parallel, E_perpendicular) to the
    crystal c-axis in MV/m; the c-axis is the depth (growth) direction, so
    Ez is parallel and Ex perpendicular."""
    x, z = site.position_um(solution.stack)
    mesh = solution.mesh
    if not (mesh.x_um[0] <= x <= mesh.x_um[-1]) or not (mesh.z_um[0] <= z <= mesh.z_um[-1]):
        raise ValueError(f"site ({x}, {z}) um lies outside the mesh")
    if mesh.nx < 2:
        zc = 0.5 * (mesh.z_um[:-1] + mesh.z_um[1:])
        e_par = float(np.interp(z, zc, solution.Ez_MVm[:, 0]))
        return e_par, 0.0
    xc = 0.5 * (mesh.x_um[:-1] + mesh.x_um[1:])
    zc = 0.5 * (mesh.z_um[:-1] + mesh.z_um[1:])
    e_perp = _bilinear(xc, zc, solution.Ex_MVm, x, z)
    e_par = _bilinear(xc, zc, solution.Ez_MVm, x, z)
    return e_par, e_perp


def _bilinear(xg: np.ndarray, zg: np.ndarray, values: np.ndarray, x: float, z: float) -> float:
    x = min(max(x, xg[0]), xg[-1])
    z = min(max(z, zg[0]), zg[-1])
    j = min(np.searchsorted(xg, x) - 1, xg.size - 2) if xg.size > 1 else 0
    k = min(np.searchsorted(zg, z) - 1, zg.size - 2) if zg.size > 1 else 0
    j = max(j, 0)
    k = max(k, 0)
    if xg.size == 1:
        tz = (z - zg[k]) / (zg[k + 1] - zg[k])
        return float(values[k, 0] * (1 - tz) + values[k + 1, 0] * tz)
    tx = (x - xg[j]) / (xg[j + 1] - xg[j])
    tz = (z - zg[k]) / (zg[k + 1] - zg[k])
    v00, v01 = values[k, j], values[k, j + 1]
    v10, v11 = values[k + 1, j], values[k + 1, j + 1]
    return float(
        v00 * (1 - tx) * (1 - tz) + v01 * tx * (1 - tz)
        + v10 * (1 - tx) * tz + v11 * tx * tz
    )


def depletion_voltage(
    stack: MaterialStack,
    mesh: Mesh2D,
    site: DefectSite,
    temperature_K: float,
    search_range_V: tuple[float, float] = (-150.0, 0.0),
    threshold_cm3: float = 1e12,
    resolution_V: float = 0.25,
    **solve_kwargs,
) -> Optional[float]:
    """Least-magnitude negative bias at which the site first drops below the
    carrier threshold, via bisection with warm-started solves.

    Returns 0.0 when the site is already depleted at zero bias and None when
    it never depletes within the search range. Depletion is asserted to be
    monotone in reverse bias across all probed points.
    """
    site.validate(stack)
    v_lo, v_hi = min(search_range_V), max(search_range_V)
    v_hi = min(v_hi, 0.0)
    cache: dict[float, FieldSolution] = {}

    def solve_at(bias: float) -> FieldSolution:
        if bias not in cache:
            warm = None
            if cache:
                nearest = min(cache, key=lambda b: abs(b - bias))
                warm = cache[nearest]
            cache[bias] = solve_poisson(
                stack, mesh, bias, temperature_K, warm_start=warm, **solve_kwargs
            )
        return cache[bias]

    def density(bias: float) -> float:
        return density_at(solve_at(bias), site)

    if density(v_hi) < threshold_cm3:
        result = v_hi if v_hi < 0 else 0.0
    elif density(v_lo) >= threshold_cm3:
        result = None
    else:
        lo, hi = v_lo, v_hi  # depleted at lo, not at hi
        while hi - lo > resolution_V:
            mid = 0.5 * (lo + hi)
            if density(mid) < threshold_cm3:
                lo = mid
            else:
                hi = mid
        result = 0.5 * (lo + hi)

    probed = sorted(cache)
    densities = [density_at(cache[b], site) for b in probed]
    for (b0, d0), (b1, d1) in zip(zip(probed, densities), zip(probed[1:], densities[1:])):
        if d0 > d1 * 1.05 + 1e-3:
            raise ArithmeticError(
                "site density is not monotone in reverse bias: "
                f"n({b0} V) = {d0:.3e} > n({b1} V) = {d1:.3e} cm^-3"
            )
    return result


def charge_balance(solution: FieldSolution, constants: PhysicalConstants = CONSTANTS) -> tuple[float, float]:
    """(total space charge, contact influx) per unit stripe length, in C/m.

    Gauss's law requires the two to cancel; the acceptance checks assert the
    mismatch below 0.1%.
    """
    mesh, stack = solution.mesh, solution.stack
    asm = _Assembly(stack, mesh, solution.temperature_K, False, constants)
    phi = solution.phi_V.ravel()
    n_m3 = solution.n_cm3.ravel() * 1e6
    ndp_m3 = solution.nd_plus_cm3.ravel() * 1e6
    charge = asm.q * asm.vol * (ndp_m3 - n_m3)
    free = ~asm.dirichlet
    total_charge = charge[free].sum()
    # flux from Dirichlet nodes into the free region
    lap_rows = asm.laplacian[free]
    flux = lap_rows.dot(phi)[np.newaxis].sum() - 0.0
    # (L phi)_free sums interior faces to zero, leaving the Dirichlet-face flux
    return float(total_charge), float(-flux)


def iv_curve(
    stack: MaterialStack,
    temperature_K: float,
    ideality: float,
    voltages_V,
    constants: PhysicalConstants = CONSTANTS,
) -> np.ndarray:
    """Thermionic-emission diode current (A) over a list of voltages.

    I = S A* T^2 exp(-Phi_B/kT) (exp(V/(n kT)) - 1), evaluated in the log
    domain so that cryogenic barriers (Phi_B/kT ~ 1000) do not underflow.
    """
    if ideality < 1.0:
        raise ValueError("ideality factor must be >= 1")
    kt = thermal_voltage(temperature_K, constants)
    area = stack.contact.area_m2
    a_star = _richardson(stack, constants)
    log_prefactor = math.log(area * a_star) + 2.0 * math.log(temperature_K) - stack.barrier_height / kt
    v = np.asarray(voltages_V, dtype=float)
    u = v / (ideality * kt)
    out = np.empty_like(v)
    for i, ui in enumerate(u):
        if ui > 35.0:
            out[i] = math.exp(min(log_prefactor + ui, 700.0))
        else:
            out[i] = math.exp(max(log_prefactor, -745.0)) * math.expm1(ui)
    return out


def forward_voltage(
    stack: MaterialStack,
    temperature_K: float,
    ideality: float,
    current_A: float,
    constants: PhysicalConstants = CONSTANTS,
) -> float:
    """Forward voltage producing a given current, by exact inversion of the
    diode law in the log domain."""
    if current_A <= 0:
        raise ValueError("current must be positive")
    kt = thermal_voltage(temperature_K, constants)
    area = stack.contact.area_m2
    a_star = _richardson(stack, constants)
    log_prefactor = math.log(area * a_star) + 2.0 * math.log(temperature_K) - stack.barrier_height / kt
    log_rhs = math.log(current_A) - log_prefactor
    u = log_rhs if log_rhs > 35.0 else math.log1p(math.exp(log_rhs))
    return ideality * kt * u


def _richardson(stack: MaterialStack, constants: PhysicalConstants) -> float:
    from .core import richardson_constant

    return richardson_constant(stack.m_eff_e, constants)
