"""Print the low end of the generalized spectrum K v = mu M v on a two-tet mesh.

The zero eigenvalues come from the gradient kernel; their count should equal
the number of free nodes minus one (Neumann) or the free nodes (Dirichlet).
"""
import argparse

import numpy as np

from stmg.analysis import semidiscrete_spectrum
from stmg.fem import assemble_operators
from stmg.mesh import build_base_mesh, build_hierarchy


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--refinements", type=int, default=1)
    p.add_argument("--bc", choices=["neumann", "dirichlet"], default="neumann")
    p.add_argument("--count", type=int, default=None)
    args = p.parse_args()
    mesh = build_hierarchy(build_base_mesh("two_tets"), args.refinements).finest
    ops = assemble_operators(mesh, bc=args.bc)
    mu = semidiscrete_spectrum(ops.M, ops.K, args.count)
    zeros = int(np.sum(np.abs(mu) <= 1e-8 * np.abs(mu).max()))
    print(f"edges {ops.n}, free nodes {ops.n_nodes}, zero eigenvalues {zeros}")
    print("smallest nonzero:", np.round(np.sort(mu[np.abs(mu) > 1e-8 * np.abs(mu).max()])[:8], 4))


if __name__ == "__main__":
    main()
