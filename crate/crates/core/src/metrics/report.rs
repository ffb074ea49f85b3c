use std::fmt::Write as _;

use super::{
    class_rates, confusion, kappa, macro_f1, mean_defined, overall_accuracy, stratify_transitions, ClassRates,
    ConfusionMatrix,
};
use crate::error::{Error, Result};
use crate::signal_io::StageLabel;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_epochs: u64,
    pub overall_accuracy: Option<f64>,
    pub kappa: Option<f64>,
    pub macro_f1: Option<f64>,
    pub f1_per_class: Vec<f64>,
    pub f1_flagged: Vec<usize>,
    pub mean_sensitivity: Option<f64>,
    pub mean_specificity: Option<f64>,
    pub rates: ClassRates,
    pub confusion: ConfusionMatrix,
    pub strata: Option<Box<Strata>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Strata {
    pub non_transition: EvalReport,
    pub transition: EvalReport,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

fn class_name(c: usize) -> String {
    StageLabel::from_index(c).map_or_else(|| format!("C{c}"), |l| l.to_string())
}

impl EvalReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let rates = class_rates(&cm);
        let f1 = macro_f1(&cm).ok();
        EvalReport {
            n_epochs: cm.total(),
            overall_accuracy: overall_accuracy(&cm),
            kappa: kappa(&cm),
            macro_f1: f1.as_ref().map(|f| f.value),
            f1_per_class: f1.as_ref().map(|f| f.per_class.clone()).unwrap_or_default(),
            f1_flagged: f1.map(|f| f.flagged).unwrap_or_default(),
            mean_sensitivity: mean_defined(&rates.sensitivity),
            mean_specificity: mean_defined(&rates.specificity),
            rates,
            confusion: cm,
            strata: None,
        }
    }

    /// Pools `(truth, prediction)` pairs of several recordings into one
    /// report with transition strata.
    pub fn evaluate(recordings: &[(&[StageLabel], &[StageLabel])]) -> Result<Self> {
        let mut all = ConfusionMatrix::new(StageLabel::ALL.len());
        let mut stable = ConfusionMatrix::new(StageLabel::ALL.len());
        let mut moving = ConfusionMatrix::new(StageLabel::ALL.len());
        for (truth, pred) in recordings {
            if truth.len() != pred.len() {
                return Err(Error::shape(format!(
                    "{} ground-truth labels vs {} predictions",
                    truth.len(),
                    pred.len()
                )));
            }
            all.merge(&confusion(truth, pred)?)?;
            for ((t, p), non_transition) in truth.iter().zip(pred.iter()).zip(stratify_transitions(truth)) {
                let target = if non_transition { &mut stable } else { &mut moving };
                target.add(t.index(), p.index());
            }
        }
        let mut report = EvalReport::from_confusion(all);
        report.strata = Some(Box::new(Strata {
            non_transition: EvalReport::from_confusion(stable),
            transition: EvalReport::from_confusion(moving),
        }));
        Ok(report)
    }

    fn write_text(&self, out: &mut String, title: &str) {
        let _ = writeln!(out, "[{title}]");
        let _ = writeln!(out, "epochs: {}", self.n_epochs);
        let _ = writeln!(out, "overall_accuracy: {}", fmt_opt(self.overall_accuracy));
        let _ = writeln!(out, "kappa: {}", fmt_opt(self.kappa));
        let _ = write!(out, "macro_f1: {}", fmt_opt(self.macro_f1));
        if !self.f1_flagged.is_empty() {
            let names: Vec<String> = self.f1_flagged.iter().map(|&c| class_name(c)).collect();
            let _ = write!(out, " (degenerate classes: {})", names.join(" "));
        }
        out.push('\n');
        let _ = writeln!(out, "mean_sensitivity: {}", fmt_opt(self.mean_sensitivity));
        let _ = writeln!(out, "mean_specificity: {}", fmt_opt(self.mean_specificity));
        let _ = writeln!(
            out,
            "{:<6}{:>13}{:>13}{:>13}{:>10}",
            "class", "sensitivity", "selectivity", "specificity", "f1"
        );
        for c in 0..self.confusion.n_classes() {
            let f1 = self.f1_per_class.get(c).copied();
            let _ = writeln!(
                out,
                "{:<6}{:>13}{:>13}{:>13}{:>10}",
                class_name(c),
                fmt_opt(self.rates.sensitivity[c]),
                fmt_opt(self.rates.selectivity[c]),
                fmt_opt(self.rates.specificity[c]),
                fmt_opt(f1)
            );
        }
        let _ = writeln!(out, "confusion (rows = truth, columns = prediction)");
        let y = self.confusion.n_classes();
        let _ = write!(out, "{:<6}", "");
        for c in 0..y {
            let _ = write!(out, "{:>8}", class_name(c));
        }
        out.push('\n');
        for t in 0..y {
            let _ = write!(out, "{:<6}", class_name(t));
            for p in 0..y {
                let _ = write!(out, "{:>8}", self.confusion.get(t, p));
            }
            out.push('\n');
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_text(&mut s, "all");
        if let Some(st) = &self.strata {
            s.push('\n');
            st.non_transition.write_text(&mut s, "non_transition");
            s.push('\n');
            st.transition.write_text(&mut s, "transition");
        }
        s
    }

    fn write_csv(&self, out: &mut String, section: &str) {
        let mut row = |metric: &str, class: &str, v: String| {
            let _ = writeln!(out, "{section},{metric},{class},{v}");
        };
        let csv_opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"));
        row("epochs", "", self.n_epochs.to_string());
        row("overall_accuracy", "", csv_opt(self.overall_accuracy));
        row("kappa", "", csv_opt(self.kappa));
        row("macro_f1", "", csv_opt(self.macro_f1));
        row("mean_sensitivity", "", csv_opt(self.mean_sensitivity));
        row("mean_specificity", "", csv_opt(self.mean_specificity));
        let y = self.confusion.n_classes();
        for c in 0..y {
            let name = class_name(c);
            row("sensitivity", &name, csv_opt(self.rates.sensitivity[c]));
            row("selectivity", &name, csv_opt(self.rates.selectivity[c]));
            row("specificity", &name, csv_opt(self.rates.specificity[c]));
            row("f1", &name, csv_opt(self.f1_per_class.get(c).copied()));
            row("f1_degenerate", &name, self.f1_flagged.contains(&c).to_string());
        }
        for t in 0..y {
            for p in 0..y {
                row(
                    "confusion",
                    &format!("{}>{}", class_name(t), class_name(p)),
                    self.confusion.get(t, p).to_string(),
                );
            }
        }
    }

    /// `section,metric,class,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,metric,class,value\n");
        self.write_csv(&mut s, "all");
        if let Some(st) = &self.strata {
            st.non_transition.write_csv(&mut s, "non_transition");
            st.transition.write_csv(&mut s, "transition");
        }
        s
    }
}
