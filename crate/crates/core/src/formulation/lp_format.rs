use std::fmt::Write as _;

use crate::domain::Sense;
use crate::scalar::Scalar;

use super::{MiqpProblem, RowRole, VarKind};

fn role_name(role: RowRole) -> &'static str {
    match role {
        RowRole::ChangeIndicator => "chg",
        RowRole::GlobalLink => "glob",
        RowRole::Cardinality => "card",
        RowRole::FeatureBudget => "budget",
        RowRole::ScoreProduct => "score",
        RowRole::SplitLeft => "left",
        RowRole::SplitRight => "right",
        RowRole::OneLeaf => "leaf",
        RowRole::LeafVote => "vote",
        RowRole::EnsembleScore => "ens",
        RowRole::OneHot => "onehot",
        RowRole::Linking => "link",
        RowRole::Implied => "cut",
    }
}

fn term<T: Scalar>(out: &mut String, first: bool, coeff: T, name: &str) {
    let sign = if coeff < T::zero() { "-" } else { "+" };
    let mag = coeff.abs();
    if first && sign == "+" {
        let _ = write!(out, " {mag} {name}");
    } else {
        let _ = write!(out, " {sign} {mag} {name}");
    }
}

/// CPLEX-LP style text of the problem. Variable names are the tag names
/// (`x_i_j`, `xi_i_j`, `y_i`, ...), row names are `<role>_<index>`. The
/// objective constant is written as a comment line because not every LP
/// reader accepts constants.
pub fn write_lp<T: Scalar>(problem: &MiqpProblem<T>) -> String {
    let names: Vec<String> = problem.vars.iter().map(|v| v.tag.to_string()).collect();
    let mut out = String::new();
    let meta = &problem.meta;
    let _ = writeln!(
        out,
        "\\ instances {} features {} selected {}",
        meta.n_instances(),
        meta.n_features(),
        meta.i_star
    );
    let _ = writeln!(out, "\\ objective constant {}", problem.objective.constant);
    out.push_str("Minimize\n obj:");
    let mut first = true;
    for (k, &c) in problem.objective.linear.iter().enumerate() {
        if c != T::zero() {
            term(&mut out, first, c, &names[k]);
            first = false;
        }
    }
    let quad: Vec<usize> = (0..names.len())
        .filter(|&k| problem.objective.quadratic[k] != T::zero())
        .collect();
    if !quad.is_empty() {
        out.push_str(if first { " [" } else { " + [" });
        for (n, &k) in quad.iter().enumerate() {
            let two_q = problem.objective.quadratic[k] + problem.objective.quadratic[k];
            term(&mut out, n == 0, two_q, &format!("{} ^2", names[k]));
        }
        out.push_str(" ] / 2");
    } else if first {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    for (r, row) in problem.rows.iter().enumerate() {
        let _ = write!(out, " {}_{}:", role_name(row.role), r);
        if row.coeffs.is_empty() {
            out.push_str(" 0");
        }
        for (n, &(k, a)) in row.coeffs.iter().enumerate() {
            term(&mut out, n == 0, a, &names[k]);
        }
        let sense = match row.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {sense} {}", row.rhs);
    }
    out.push_str("Bounds\n");
    for (k, v) in problem.vars.iter().enumerate() {
        if v.lower == v.upper {
            let _ = writeln!(out, " {} = {}", names[k], v.lower);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", v.lower, names[k], v.upper);
        }
    }
    for (header, kind) in [("Binaries", VarKind::Binary), ("Generals", VarKind::Integer)] {
        let list: Vec<&str> = problem
            .vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == kind)
            .map(|(k, _)| names[k].as_str())
            .collect();
        if !list.is_empty() {
            let _ = writeln!(out, "{header}");
            for chunk in list.chunks(8) {
                let _ = writeln!(out, " {}", chunk.join(" "));
            }
        }
    }
    out.push_str("End\n");
    out
}
