use std::collections::BTreeMap;

use super::{Context, TokenId};

/// Sparse gradient over the policy table: one dense row per touched context.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrad {
    width: usize,
    rows: BTreeMap<Context, Vec<f64>>,
}

impl ParamGrad {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            rows: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Context, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn get(&self, ctx: &[TokenId]) -> Option<&[f64]> {
        self.rows.get(ctx).map(Vec::as_slice)
    }

    pub fn row_mut(&mut self, ctx: &[TokenId]) -> &mut Vec<f64> {
        if !self.rows.contains_key(ctx) {
            self.rows.insert(ctx.to_vec(), vec![0.0; self.width]);
        }
        self.rows.get_mut(ctx).expect("row inserted above")
    }

    /// Adds `weight · (e_token − probs)` to the row of `ctx`.
    pub fn accumulate_log_prob(&mut self, ctx: &[TokenId], probs: &[f64], token: TokenId, weight: f64) {
        let row = self.row_mut(ctx);
        for (j, (g, p)) in row.iter_mut().zip(probs).enumerate() {
            let indicator = if j == token as usize { 1.0 } else { 0.0 };
            *g += weight * (indicator - p);
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrad, scale: f64) {
        for (ctx, g) in &other.rows {
            let row = self.row_mut(ctx);
            for (a, b) in row.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.rows.values_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn norm(&self) -> f64 {
        self.rows.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().all(|g| g.is_finite())
    }

    /// Largest entrywise difference, treating absent rows as zero.
    pub fn max_abs_diff(&self, other: &ParamGrad) -> f64 {
        let zero = vec![0.0; self.width.max(other.width)];
        self.rows
            .keys()
            .chain(other.rows.keys())
            .map(|ctx| {
                let a = self.rows.get(ctx).unwrap_or(&zero);
                let b = other.rows.get(ctx).unwrap_or(&zero);
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn contexts(&self) -> impl Iterator<Item = &Context> {
        self.rows.keys()
    }
}
