"""ATC learning curves under noisy links, sequential vs stochastic, several L."""
from _common import run_figure

if __name__ == "__main__":
    rows = run_figure("fig3", __doc__)
    for L in (1, 2, 4):
        seq = rows[f"atc-sequential-L{L}-noisy"].sim_db
        sto = rows[f"atc-stochastic-L{L}-noisy"].sim_db
        print(f"L={L}: sequential - stochastic = {seq - sto:+.2f} dB")
