"""Two replicates of the univariate table under both copulas."""

from skewglmm import harness
from skewglmm.mcem import McemConfig

CONFIG = McemConfig(r_init=30, r_max=100, max_iter=25, restarts=1, m_step_draws=30)


def main():
    records = harness.replicate_table(1, 2, 0, harness.COPULAS, CONFIG)
    for row in harness.summarize(records, 1):
        print(f"{row['copula']:<11}{row['parameter']:<14}truth {row['truth']:6.3f}  mean {row['mc_mean']:8.4f}")


if __name__ == "__main__":
    main()
