//! Per-category formulas and the stacked design matrix.
//!
//! A formula such as `y ~ 1 + v1 | 1 + v2` lists one block of terms per
//! category. Each category gets its own coefficients, so the stacked design
//! matrix has `C·N` rows (observation-major, category-minor) and
//! `Σ_c J_c` columns (category-major, declared term order within a category).

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Covariate(String),
}

impl Term {
    pub fn label(&self) -> &str {
        match self {
            Term::Intercept => "intercept",
            Term::Covariate(name) => name,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("1"),
            Term::Covariate(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulaSpec {
    pub response: String,
    pub per_category_terms: Vec<Vec<Term>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    One,
    Tilde,
    Plus,
    Bar,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, ch)) = chars.peek() {
        match ch {
            c if c.is_whitespace() => {
                chars.next();
            }
            '~' => {
                tokens.push((pos, Token::Tilde));
                chars.next();
            }
            '+' => {
                tokens.push((pos, Token::Plus));
                chars.next();
            }
            '|' => {
                tokens.push((pos, Token::Bar));
                chars.next();
            }
            c if c.is_ascii_alphabetic() || c == '_' || c == '.' => {
                let mut ident = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push((pos, Token::Ident(ident)));
            }
            c if c.is_ascii_digit() => {
                let mut num = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '.' {
                        num.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                if num != "1" {
                    return Err(Error::Parse {
                        position: pos,
                        message: format!("unexpected literal `{num}`; only `1` (intercept) is allowed"),
                    });
                }
                tokens.push((pos, Token::One));
            }
            other => {
                return Err(Error::Parse {
                    position: pos,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(tokens)
}

impl FormulaSpec {
    /// Parses `response ~ block (| block)*`, where a block is `1` and/or
    /// covariate names joined by `+`.
    pub fn parse(text: &str, n_categories: usize) -> Result<Self> {
        let tokens = tokenize(text)?;
        let end = text.len();
        let mut iter = tokens.into_iter().peekable();

        let response = match iter.next() {
            Some((_, Token::Ident(name))) => name,
            Some((pos, tok)) => {
                return Err(Error::Parse { position: pos, message: format!("expected response name, found {tok:?}") })
            }
            None => return Err(Error::Parse { position: 0, message: "empty formula".into() }),
        };
        match iter.next() {
            Some((_, Token::Tilde)) => {}
            Some((pos, tok)) => {
                return Err(Error::Parse { position: pos, message: format!("expected `~`, found {tok:?}") })
            }
            None => return Err(Error::Parse { position: end, message: "expected `~`".into() }),
        }

        let mut blocks: Vec<Vec<(usize, Term)>> = vec![Vec::new()];
        let mut expect_term = true;
        for (pos, tok) in iter {
            match (expect_term, tok) {
                (true, Token::One) => {
                    blocks.last_mut().unwrap().push((pos, Term::Intercept));
                    expect_term = false;
                }
                (true, Token::Ident(name)) => {
                    blocks.last_mut().unwrap().push((pos, Term::Covariate(name)));
                    expect_term = false;
                }
                (false, Token::Plus) => expect_term = true,
                (false, Token::Bar) => {
                    blocks.push(Vec::new());
                    expect_term = true;
                }
                (true, tok) => {
                    return Err(Error::Parse { position: pos, message: format!("expected a term, found {tok:?}") })
                }
                (false, tok) => {
                    return Err(Error::Parse {
                        position: pos,
                        message: format!("expected `+` or `|`, found {tok:?}"),
                    })
                }
            }
        }
        if expect_term {
            return Err(Error::Parse { position: end, message: "formula ends where a term is expected".into() });
        }

        if blocks.len() != n_categories {
            return Err(Error::Arity { expected: n_categories, found: blocks.len() });
        }
        let per_category_terms = blocks
            .into_iter()
            .enumerate()
            .map(|(c, block)| {
                let mut seen = HashSet::new();
                for (_, term) in &block {
                    if !seen.insert(term.clone()) {
                        return Err(Error::Validation(format!(
                            "term `{}` appears twice in category {}",
                            term.label(),
                            c + 1
                        )));
                    }
                }
                Ok(block.into_iter().map(|(_, t)| t).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { response, per_category_terms })
    }

    pub fn n_categories(&self) -> usize {
        self.per_category_terms.len()
    }

    pub fn n_coefficients(&self) -> usize {
        self.per_category_terms.iter().map(Vec::len).sum()
    }

    /// Offset of category `c`'s first coefficient in the stacked vector.
    pub fn category_offset(&self, c: usize) -> usize {
        self.per_category_terms[..c].iter().map(Vec::len).sum()
    }

    /// `(category index, term)` for every coefficient, in column order.
    pub fn coefficients(&self) -> impl Iterator<Item = (usize, &Term)> {
        self.per_category_terms
            .iter()
            .enumerate()
            .flat_map(|(c, terms)| terms.iter().map(move |t| (c, t)))
    }

    /// Distinct covariate names in first-appearance order.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for (_, term) in self.coefficients() {
            if let Term::Covariate(name) = term {
                if !names.contains(name) {
                    names.push(name.clone());
                }
            }
        }
        names
    }
}

impl fmt::Display for FormulaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        for (c, terms) in self.per_category_terms.iter().enumerate() {
            if c > 0 {
                f.write_str(" | ")?;
            }
            for (k, term) in terms.iter().enumerate() {
                if k > 0 {
                    f.write_str(" + ")?;
                }
                write!(f, "{term}")?;
            }
        }
        Ok(())
    }
}

/// Named covariate columns of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl CovariateTable {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Shape(format!("{} names for {} columns", names.len(), columns.len())));
        }
        let n_rows = columns.first().map(Vec::len).unwrap_or(0);
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::Shape(format!("column `{name}` has {} rows, expected {n_rows}", col.len())));
            }
            if let Some(bad) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("column `{name}` has a missing value at row {bad}")));
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Validation(format!("duplicate covariate `{dup}`")));
        }
        Ok(Self { names, columns, n_rows })
    }

    /// A table with no covariates and `n_rows` rows, for intercept-only models.
    pub fn empty(n_rows: usize) -> Self {
        Self { names: Vec::new(), columns: Vec::new(), n_rows }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }
}

/// Sparse `C·N × J` matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_categories: usize,
    n_obs: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl DesignMatrix {
    /// Builds directly from row-wise triplets; rows must be in order.
    pub fn from_rows(n_categories: usize, n_cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        if n_categories == 0 || rows.len() % n_categories != 0 {
            return Err(Error::Shape(format!("{} rows do not split into blocks of {n_categories}", rows.len())));
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for &(j, v) in row {
                if j >= n_cols {
                    return Err(Error::Shape(format!("column {j} out of range for {n_cols} columns")));
                }
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { n_categories, n_obs: rows.len() / n_categories, n_cols, row_ptr, col_idx, values })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Structural entries `(column, value)` of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::Shape(format!("vector of length {} for {} columns", x.len(), self.n_cols)));
        }
        let mut out = vec![0.0; self.n_rows()];
        self.matvec_into(x, &mut out);
        Ok(out)
    }

    /// `A x` into a preallocated buffer; lengths are the caller's contract.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `Aᵀ v`.
    pub fn transpose_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_rows() {
            return Err(Error::Shape(format!("vector of length {} for {} rows", v.len(), self.n_rows())));
        }
        let mut out = vec![0.0; self.n_cols];
        for (r, &vr) in v.iter().enumerate() {
            for (j, a) in self.row(r) {
                out[j] += a * vr;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n_rows(), self.n_cols);
        for r in 0..self.n_rows() {
            for (j, v) in self.row(r) {
                m[(r, j)] += v;
            }
        }
        m
    }
}

/// Row `(n·C + c)` holds 1 in category c's intercept column and `v_n` in each
/// of category c's covariate columns.
pub fn build_design_matrix(spec: &FormulaSpec, data: &CovariateTable) -> Result<DesignMatrix> {
    let c_count = spec.n_categories();
    let n_obs = data.n_rows();
    if n_obs == 0 {
        return Err(Error::Validation("covariate table has no rows".into()));
    }
    let columns: Vec<Vec<Option<&[f64]>>> = spec
        .per_category_terms
        .iter()
        .map(|terms| {
            terms
                .iter()
                .map(|t| match t {
                    Term::Intercept => Ok(None),
                    Term::Covariate(name) => data.get(name).map(Some),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let offsets: Vec<usize> = (0..c_count).map(|c| spec.category_offset(c)).collect();
    let mut rows = Vec::with_capacity(n_obs * c_count);
    for n in 0..n_obs {
        for c in 0..c_count {
            let row = columns[c]
                .iter()
                .enumerate()
                .map(|(k, col)| (offsets[c] + k, col.map_or(1.0, |v| v[n])))
                .collect();
            rows.push(row);
        }
    }
    DesignMatrix::from_rows(c_count, spec.n_coefficients(), &rows)
}

/// Diagonal Gaussian prior precision on the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorPrecision {
    Scalar(f64),
    PerCoefficient(Vec<f64>),
}

impl PriorPrecision {
    pub fn diagonal(&self, n: usize) -> Result<Vec<f64>> {
        let diag = match self {
            PriorPrecision::Scalar(tau) => vec![*tau; n],
            PriorPrecision::PerCoefficient(v) => {
                if v.len() != n {
                    return Err(Error::Shape(format!("{} prior precisions for {n} coefficients", v.len())));
                }
                v.clone()
            }
        };
        if let Some(bad) = diag.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::Validation(format!("prior precision {bad} must be positive")));
        }
        Ok(diag)
    }
}

/// Stacked coefficients with their prior.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    pub x: Vec<f64>,
    pub prior: PriorPrecision,
}

impl LatentField {
    pub fn new(x: Vec<f64>, prior: PriorPrecision) -> Result<Self> {
        prior.diagonal(x.len())?;
        Ok(Self { x, prior })
    }
}

/// `η̃ = A x`; entry `n·C + c` is the predictor of category c, observation n.
pub fn vectorize_predictor(a: &DesignMatrix, field: &LatentField) -> Result<Vec<f64>> {
    a.matvec(&field.x)
}
