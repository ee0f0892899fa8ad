"""Connection models that each break one falsification row on purpose."""

import math
from dataclasses import dataclass
from fractions import Fraction

from cbl import holonomy as hol


@dataclass(frozen=True)
class FamilyDependentTheta(hol.ConnectionModel):
    def theta(self, fam):
        return self.theta0 * (1.3 if fam.family_id == "kcbs" else 1.0)


@dataclass(frozen=True)
class LawDependentTheta(hol.ConnectionModel):
    def theta(self, fam):
        return self.theta0 * (1.1 if self.gate_law == hol.ALT_GATE_LAW else 1.0)


@dataclass(frozen=True)
class ScaleDependentTheta(hol.ConnectionModel):
    def theta(self, fam):
        return self.theta0 * fam.decimation


@dataclass(frozen=True)
class LeakyProbe(hol.ConnectionModel):
    def probe_term(self, fam, L):
        # probe weight grows with the loop, so it lands in the intercept
        return super().probe_term(fam, L) * L


@dataclass(frozen=True)
class ChiralFaces(hol.ConnectionModel):
    def oriented_terms(self, fam, L):
        ts = self.terms(fam, L)
        if fam.orientation == -1:
            ts = [ts[0][::-1]] + [-t[::-1] for t in ts[1:]]
        return ts


@dataclass(frozen=True)
class QuadraticFaces(hol.ConnectionModel):
    def faces(self, fam, L):
        return math.floor(6 * fam.rho_face**2 * L + Fraction(1, 2))


PLANTED = {1: FamilyDependentTheta, 2: LawDependentTheta, 3: ScaleDependentTheta,
           4: LeakyProbe, 5: ChiralFaces, 6: QuadraticFaces}
