"""Site-occupation statistics seen through the cavity spectrum.

Six strongly coupled sites are probed across the superradiant resonance.
With exactly one atom per site (Mott insulator) the spectrum has a single
peak.  With independently filled sites the number of coupled atoms
fluctuates, and each atom number gives its own collective shift, so the
spectrum splits into a comb of teeth.

Run with ``python demos/lattice_comb.py``.
"""

# %%
from cavity_sed.experiment import Experiment
from cavity_sed.model import ConstantDetuning, LatticeConfig, PumpOff, SystemParams
from cavity_sed.observables import SweepSpec, comb_experiment

dca = -2257.92
params = SystemParams(delta_c=0.0, eta=2.0, coupling_amp=168.0, detuning=ConstantDetuning(dca), pump=PumpOff())
mask = (False,) * 3 + (True,) * 6 + (False,) * 3
lattice = LatticeConfig.regular(12, 0.02, coupled_mask=mask)
spec = SweepSpec("cavity_detuning", -180.0, 30.0, 421, delta_ca=dca)

res = comb_experiment(Experiment(params, lattice, n_realizations=2000, seed=3), spec)

# %%
for name, peaks in (("Mott insulator", res.mi_peaks), ("independent filling", res.independent_peaks)):
    print(f"{name}: {len(peaks)} peak(s)")
    for p in peaks:
        print(f"   Delta_c = {p.position:8.2f} kappa   height {p.height:.3e}   FWHM {p.width:.2f} kappa")
