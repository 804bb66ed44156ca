"""ATC vs CTA under ideal and noisy links for both selection schemes."""
from _common import run_figure

if __name__ == "__main__":
    rows = run_figure("fig4", __doc__)
    for scheme in ("sequential", "stochastic"):
        for links in ("ideal", "noisy"):
            atc = rows[f"atc-{scheme}-L4-{links}"].sim_db
            cta = rows[f"cta-{scheme}-L4-{links}"].sim_db
            print(f"{scheme:10s} {links:5s}: ATC - CTA = {atc - cta:+.2f} dB")
