"""
Default Configuration — Documented defaults of every run-file key.

A run file overrides any of these per section (``[schedule]``, ``[force]`` …).
Empty strings mean "derive from N" for the per-entry length scales.
Environment variables in settings.py control logging, threads and output only.
"""

DEFAULT_CONFIG = {
    # ── Schedule ─────────────────────────────────────────────────
    "schedule": {
        "n_values": "64,216,512,1000",
        "phi_values": "",               # empty: phi_scale * N**-0.5
        "phi_scale": 0.16,
        "generator": "lattice",         # lattice | rsa
        "jitter": 0.1,                  # lattice displacement, fraction of the spacing
        "gap_factor": 2.0,              # rsa minimum distance, multiples of 2R
        "box_scale": 1.0,               # container ball B_L(0)
        "seed": 20190917,
        "delta": "",                    # empty: N**(-5/12)
        "cube_side": "",                # empty: N**(-1/6)
        "mollifier_width": "",          # empty: cube side
    },

    # ── Force ────────────────────────────────────────────────────
    "force": {
        "amplitude": "0,0,1",
        "support_radius": 0.8,
        "center": "0,0,0",
    },

    # ── Quadrature ───────────────────────────────────────────────
    "quadrature": {
        "ball_radial_order": 8,
        "angular_order": 26,
        "far_ratio": 6.0,               # ball corrections switch to moments beyond far_ratio·R
        "grid_factor": 0.5,             # homogenized grid spacing h = grid_factor·s
        "slab_nodes": 12,               # Gauss nodes per cube slab in the mollifier integral
        "sample_spacing": 0.1,          # sup-norm grid spacing
        "lp_spacing": 0.1,
        "lp_radius_factor": 2.0,        # L^p box is [−factor·L, factor·L]³
        "strain_mode": "surface_avg",   # surface_avg | point
    },

    # ── Tolerances ───────────────────────────────────────────────
    "tolerances": {
        "reflect_tol": 1e-6,
        "reflect_max_iter": 10,
        "fixed_point_tol": 1e-10,
        "fixed_point_max_iter": 50,
        "quad_tol": 0.25,               # relative h-vs-2h error allowed in homogenized convolutions
        "c_sep": 4.0,
        "eps_phi_log": 0.5,
    },

    # ── Summation ────────────────────────────────────────────────
    "summation": {
        "method": "direct",             # direct | tree
        "theta": "",                    # empty: opening angle from tree_tolerance
        "expansion_order": 2,
        "tree_tolerance": 1e-6,
        "leaf_size": 16,
    },

    # ── Output ───────────────────────────────────────────────────
    "output": {
        "plots": True,
        "record_timing": False,
        "beta_sweep": False,
        "beta_values": "3,3.5,4,4.5,5,5.5,6,6.5,7",
    },
}
