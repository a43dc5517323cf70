use imm_core::experiments::logreg::run_logreg;
use imm_core::experiments::output::ResultRow;
use imm_core::experiments::plot::{line_band_chart, series_from_rows};
use imm_core::experiments::quality::{logreg_quality, rl_quality, QualityCell};
use imm_core::experiments::rl::{run_rl, RlMethod};
use imm_core::experiments::serialized::{run_serialized_comparison, time_objectives};
use imm_core::experiments::toylm::{run_lm_comparison, LmMethod};
use imm_core::Result;

use crate::config::FileConfig;
use crate::Experiment;

pub struct Chart {
    pub name: &'static str,
    pub metric: &'static str,
    pub title: &'static str,
    pub x_label: &'static str,
    pub y_label: &'static str,
}

impl Chart {
    pub fn render(&self, rows: &[ResultRow]) -> String {
        line_band_chart(self.title, self.x_label, self.y_label, &series_from_rows(rows, self.metric))
    }
}

pub struct Produced {
    pub rows: Vec<ResultRow>,
    pub charts: Vec<Chart>,
    /// Extra files keyed by suffix. Their content may vary between reruns.
    pub extras: Vec<(&'static str, String)>,
}

pub fn charts(exp: Experiment) -> Vec<Chart> {
    match exp {
        Experiment::Logreg => vec![
            Chart { name: "accuracy", metric: "accuracy", title: "Test accuracy", x_label: "training size n", y_label: "accuracy (%)" },
            Chart {
                name: "restricted_risk",
                metric: "restricted_risk",
                title: "Restricted-task risk",
                x_label: "training size n",
                y_label: "induced cross-entropy",
            },
        ],
        Experiment::Lm => vec![],
        Experiment::Rl => {
            vec![Chart { name: "reward", metric: "reward", title: "Average reward", x_label: "epochs", y_label: "reward per step" }]
        }
        Experiment::Quality => vec![
            Chart {
                name: "logreg",
                metric: "accuracy",
                title: "Accuracy under a degraded target",
                x_label: "training size n",
                y_label: "accuracy (%)",
            },
            Chart { name: "rl", metric: "reward", title: "Reward under a degraded teacher", x_label: "epochs", y_label: "reward per step" },
        ],
        Experiment::Serialized => vec![Chart {
            name: "accuracy",
            metric: "accuracy",
            title: "Sampled vs serialized",
            x_label: "training size n",
            y_label: "accuracy (%)",
        }],
    }
}

fn quality_rows(cells: &[QualityCell], tag: &str, metric: &str, rows: &mut Vec<ResultRow>) {
    for c in cells {
        let b = format!("baseline {tag}={}", c.level);
        let m = format!("imm {tag}={}", c.level);
        for (i, v) in c.baseline_runs.iter().enumerate() {
            rows.push(ResultRow::new(i, c.x, &b, metric, *v));
        }
        for (i, v) in c.imm_runs.iter().enumerate() {
            rows.push(ResultRow::new(i, c.x, &m, metric, *v));
        }
        rows.push(ResultRow::new(0, c.x, &m, "tuned_ratio", c.tuned_ratio));
    }
}

pub fn run_experiment(exp: Experiment, cfg: &FileConfig) -> Result<Produced> {
    let mut rows = Vec::new();
    let mut extras = Vec::new();
    match exp {
        Experiment::Logreg => {
            for &n in &cfg.logreg.sizes {
                for &m in &cfg.logreg.methods {
                    let out = run_logreg(&cfg.logreg.config(n, m))?;
                    eprintln!("logreg n={n} {}: accuracy {:.2}", m.name(), out.accuracy.mean);
                    for (i, r) in out.runs.iter().enumerate() {
                        rows.push(ResultRow::new(i, n, m.name(), "accuracy", r.accuracy));
                        rows.push(ResultRow::new(i, n, m.name(), "restricted_risk", r.restricted_risk));
                    }
                }
            }
        }
        Experiment::Lm => {
            let results = run_lm_comparison(&cfg.lm, &LmMethod::ALL)?;
            for (i, per_method) in results.iter().enumerate() {
                for (m, r) in LmMethod::ALL.iter().zip(per_method) {
                    rows.push(ResultRow::new(i, cfg.lm.corpus_len, m.name(), "full_kl", r.full_kl));
                    rows.push(ResultRow::new(i, cfg.lm.corpus_len, m.name(), "induced_ce", r.induced_ce));
                }
            }
        }
        Experiment::Rl => {
            for m in [RlMethod::Reinforce, RlMethod::ReinforceImm] {
                let out = run_rl(&cfg.rl, m)?;
                eprintln!("rl {} done", m.name());
                for (i, r) in out.rewards.iter().enumerate() {
                    for (e, v) in out.epochs.iter().zip(r) {
                        rows.push(ResultRow::new(i, *e, m.name(), "reward", *v));
                    }
                }
            }
        }
        Experiment::Quality => {
            let lr = logreg_quality(&cfg.quality, &cfg.logreg.base())?;
            eprintln!("quality logreg done");
            quality_rows(&lr, "eps", "accuracy", &mut rows);
            let rl = rl_quality(&cfg.quality, &cfg.rl)?;
            quality_rows(&rl, "tau", "reward", &mut rows);
        }
        Experiment::Serialized => {
            for c in run_serialized_comparison(&cfg.serialized, &cfg.logreg.base())? {
                for (i, v) in c.runs.iter().enumerate() {
                    rows.push(ResultRow::new(i, c.n, c.method.name(), "accuracy", *v));
                }
            }
            let timing = time_objectives(&cfg.serialized, &cfg.logreg.base())?;
            eprintln!("timing: serialized/baseline {:.2}, sampled linear fit r2 {:.3}", timing.serialized_ratio(), timing.linear_r2);
            extras.push(("timing.json", serde_json::to_string_pretty(&timing)?));
        }
    }
    Ok(Produced { rows, charts: charts(exp), extras })
}
