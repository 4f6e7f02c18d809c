//! Elementary ACUN (XOR) unification with free constants, by Gaussian
//! elimination over GF(2).
//!
//! Every equation `l ≈ r` becomes the parity equation `l ⊕ r = 0` over a
//! basis of columns: one column per solvable variable, one per distinct
//! non-variable element ("unit": constants, atoms, frozen variables,
//! abstracted standard terms). Reduced row echelon form either exposes an
//! inconsistency (a zero variable-part row with a non-zero unit part) or
//! reads off the unique mgu, with non-pivot variables left free.

use crate::subst::Substitution;
use crate::term::{Term, Variable};
use std::collections::BTreeSet;
use thiserror::Error;

/// Which theory a purified problem belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theory {
    Std,
    Acun,
}

/// A theory-pure unification problem.
#[derive(Debug, Clone)]
pub struct PureProblem {
    pub theory: Theory,
    pub equations: Vec<(Term, Term)>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AcunError {
    #[error("equation side is not a pure XOR sum over variables, constants and atoms: {0}")]
    ImpureProblem(String),
}

fn sum_elements(t: &Term, out: &mut Vec<Term>) -> Result<(), AcunError> {
    match t {
        Term::Xor(es) => {
            for e in es {
                sum_elements(e, out)?;
            }
            Ok(())
        }
        Term::Constant(crate::term::Constant::Zero) => Ok(()),
        Term::Variable(_) | Term::Constant(_) | Term::Atom(_) => {
            out.push(t.clone());
            Ok(())
        }
        other => Err(AcunError::ImpureProblem(other.to_string())),
    }
}

/// Complete unification for a pure ACUN problem. Variables in `frozen` are
/// treated as constants. Returns the empty list when non-unifiable, and a
/// single mgu otherwise (ACUN-with-constants unification is unitary); the
/// mgu is empty when the sides are already equal modulo ACUN.
pub fn unify_acun(
    p: &PureProblem,
    frozen: &BTreeSet<Variable>,
) -> Result<Vec<Substitution>, AcunError> {
    debug_assert_eq!(p.theory, Theory::Acun);

    // Column layout: solvable variables first, then units.
    let mut rows_elems: Vec<Vec<Term>> = Vec::new();
    for (l, r) in &p.equations {
        let mut elems = Vec::new();
        sum_elements(l, &mut elems)?;
        sum_elements(r, &mut elems)?;
        rows_elems.push(elems);
    }

    let mut vars: BTreeSet<Variable> = BTreeSet::new();
    let mut units: BTreeSet<Term> = BTreeSet::new();
    for elems in &rows_elems {
        for e in elems {
            match e {
                Term::Variable(v) if !frozen.contains(v) => {
                    vars.insert(v.clone());
                }
                other => {
                    units.insert(other.clone());
                }
            }
        }
    }
    let vars: Vec<Variable> = vars.into_iter().collect();
    let units: Vec<Term> = units.into_iter().collect();
    let ncols = vars.len() + units.len();

    let col_of = |e: &Term| -> usize {
        match e {
            Term::Variable(v) if !frozen.contains(v) => {
                vars.binary_search(v).expect("variable column")
            }
            other => vars.len() + units.binary_search(other).expect("unit column"),
        }
    };

    let mut rows: Vec<Vec<bool>> = Vec::new();
    for elems in &rows_elems {
        let mut row = vec![false; ncols];
        for e in elems {
            let c = col_of(e);
            row[c] = !row[c];
        }
        rows.push(row);
    }

    // Forward elimination with variable columns as pivot candidates.
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; vars.len()];
    let mut next_row = 0usize;
    for col in 0..vars.len() {
        let Some(pr) = (next_row..rows.len()).find(|&r| rows[r][col]) else {
            continue;
        };
        rows.swap(next_row, pr);
        for r in 0..rows.len() {
            if r != next_row && rows[r][col] {
                let (head, tail) = rows.split_at_mut(next_row.max(r));
                let (a, b) = if r < next_row {
                    (&mut head[r], &tail[0])
                } else {
                    (&mut tail[0], &head[next_row])
                };
                for c in 0..ncols {
                    a[c] ^= b[c];
                }
            }
        }
        pivot_of_col[col] = Some(next_row);
        next_row += 1;
    }

    // Rows with no variable part must have no unit part either.
    for (r, row) in rows.iter().enumerate() {
        let has_var = row[..vars.len()].iter().any(|&b| b);
        let has_unit = row[vars.len()..].iter().any(|&b| b);
        if !has_var && has_unit {
            let _ = r;
            return Ok(Vec::new());
        }
    }

    let mut bindings: Vec<(Variable, Term)> = Vec::new();
    for (col, pivot) in pivot_of_col.iter().enumerate() {
        let Some(r) = pivot else { continue };
        let row = &rows[*r];
        let mut image: Vec<Term> = Vec::new();
        for free_col in 0..vars.len() {
            if free_col != col && row[free_col] {
                image.push(Term::Variable(vars[free_col].clone()));
            }
        }
        for (u, unit) in units.iter().enumerate() {
            if row[vars.len() + u] {
                image.push(unit.clone());
            }
        }
        bindings.push((vars[col].clone(), Term::xor(image)));
    }

    let sigma = Substitution::from_bindings(bindings)
        .expect("RREF bindings are triangular and conflict-free");
    Ok(vec![sigma])
}
