use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RankerError;
use crate::features::{FeatureBundle, FeatureGroup};
use crate::task::NUM_TASKS;
use crate::tokenize::TokenIdList;

/// Probabilities are clamped to `[LOSS_CLAMP, 1 - LOSS_CLAMP]` before logs.
pub const LOSS_CLAMP: f64 = 1e-7;

/// Set of enabled feature groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct GroupSet {
    bits: u8,
}

impl GroupSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        FeatureGroup::ALL.into_iter().collect()
    }

    pub fn contains(&self, g: FeatureGroup) -> bool {
        self.bits & Self::bit(g) != 0
    }

    pub fn insert(&mut self, g: FeatureGroup) {
        self.bits |= Self::bit(g);
    }

    pub fn remove(&mut self, g: FeatureGroup) {
        self.bits &= !Self::bit(g);
    }

    pub fn with(mut self, g: FeatureGroup) -> Self {
        self.insert(g);
        self
    }

    pub fn without(mut self, g: FeatureGroup) -> Self {
        self.remove(g);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = FeatureGroup> + '_ {
        FeatureGroup::ALL.into_iter().filter(|&g| self.contains(g))
    }

    fn bit(g: FeatureGroup) -> u8 {
        1 << (g as u8)
    }
}

impl FromIterator<FeatureGroup> for GroupSet {
    fn from_iter<I: IntoIterator<Item = FeatureGroup>>(iter: I) -> Self {
        let mut s = Self::empty();
        for g in iter {
            s.insert(g);
        }
        s
    }
}

impl Serialize for GroupSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for GroupSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<FeatureGroup>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            weights: vec![0.0; rows * dim],
        }
    }

    /// Uniform in `[-1/sqrt(dim), 1/sqrt(dim)]`.
    fn init(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        Self {
            rows,
            dim,
            weights: (0..rows * dim).map(|_| rng.random_range(-scale..=scale)).collect(),
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.weights[r * self.dim..(r + 1) * self.dim]
    }
}

/// Affine layer, `weights` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-scale..=scale))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, out_v) in out.iter_mut().enumerate() {
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *out_v = self.bias[o] + dot(w, x);
        }
    }
}

/// Four independent lanes so the loop vectorizes; the summation order is
/// fixed, so results stay deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TableId {
    User = 0,
    Item = 1,
    ItemTokens = 2,
    ProfileTokens = 3,
}

impl TableId {
    pub const ALL: [TableId; 4] = [TableId::User, TableId::Item, TableId::ItemTokens, TableId::ProfileTokens];

    pub fn name(self) -> &'static str {
        match self {
            TableId::User => "user",
            TableId::Item => "item",
            TableId::ItemTokens => "item_tokens",
            TableId::ProfileTokens => "profile_tokens",
        }
    }
}

/// Sizes of every parameter block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub visual_dim: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub user_rows: usize,
    pub item_rows: usize,
    pub item_token_rows: usize,
    pub profile_token_rows: usize,
}

impl ModelShape {
    /// `V + dim × 4`: user, item, item-token and profile-token slots are
    /// always present.
    pub fn input_width(&self) -> usize {
        self.visual_dim + 4 * self.embed_dim
    }

    pub fn validate(&self) -> Result<(), RankerError> {
        let bad = |m: &str| Err(RankerError::InvalidConfig(m.to_string()));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if self.user_rows == 0 || self.item_rows == 0 || self.item_token_rows == 0 || self.profile_token_rows == 0 {
            return bad("embedding tables need at least one row");
        }
        Ok(())
    }

    fn table_rows(&self, t: TableId) -> usize {
        match t {
            TableId::User => self.user_rows,
            TableId::Item => self.item_rows,
            TableId::ItemTokens => self.item_token_rows,
            TableId::ProfileTokens => self.profile_token_rows,
        }
    }

    pub fn n_params(&self) -> usize {
        let tables: usize = TableId::ALL.iter().map(|&t| self.table_rows(t) * self.embed_dim).sum();
        let mut widths = vec![self.input_width()];
        widths.extend(&self.hidden);
        widths.push(NUM_TASKS);
        let dense: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        tables + dense
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub enabled: GroupSet,
    pub seed: u64,
    pub tables: [EmbeddingTable; 4],
    pub trunk: Vec<Dense>,
    pub heads: Dense,
}

impl ModelParams {
    /// Seeded initialization. Blocks are drawn in the order user table, item
    /// table, trunk, heads, item-token table, profile-token table, so arms
    /// that differ only in token-table size share every other initial value.
    pub fn init(shape: ModelShape, enabled: GroupSet, seed: u64) -> Result<Self, RankerError> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.embed_dim;
        let user = EmbeddingTable::init(shape.user_rows, d, &mut rng);
        let item = EmbeddingTable::init(shape.item_rows, d, &mut rng);
        let mut trunk = Vec::with_capacity(shape.hidden.len());
        let mut width = shape.input_width();
        for &h in &shape.hidden {
            trunk.push(Dense::init(width, h, &mut rng));
            width = h;
        }
        let heads = Dense::init(width, NUM_TASKS, &mut rng);
        let item_tokens = EmbeddingTable::init(shape.item_token_rows, d, &mut rng);
        let profile_tokens = EmbeddingTable::init(shape.profile_token_rows, d, &mut rng);
        Ok(Self {
            shape,
            enabled,
            seed,
            tables: [user, item, item_tokens, profile_tokens],
            trunk,
            heads,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(shape: ModelShape, enabled: GroupSet) -> Result<Self, RankerError> {
        shape.validate()?;
        let d = shape.embed_dim;
        let mut trunk = Vec::new();
        let mut width = shape.input_width();
        for &h in &shape.hidden {
            trunk.push(Dense::zeros(width, h));
            width = h;
        }
        Ok(Self {
            tables: TableId::ALL.map(|t| EmbeddingTable::zeros(shape.table_rows(t), d)),
            heads: Dense::zeros(width, NUM_TASKS),
            trunk,
            shape,
            enabled,
            seed: 0,
        })
    }

    pub fn table(&self, t: TableId) -> &EmbeddingTable {
        &self.tables[t as usize]
    }

    pub fn table_mut(&mut self, t: TableId) -> &mut EmbeddingTable {
        &mut self.tables[t as usize]
    }

    /// Parameter blocks in checkpoint order: the four tables, then each trunk
    /// layer's weights and bias, then the heads' weights and bias.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.tables.iter().map(|t| t.weights.as_slice()).collect();
        for layer in self.trunk.iter().chain(std::iter::once(&self.heads)) {
            out.push(&layer.weights);
            out.push(&layer.bias);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.tables.iter_mut().map(|t| t.weights.as_mut_slice()).collect();
        for layer in self.trunk.iter_mut().chain(std::iter::once(&mut self.heads)) {
            out.push(&mut layer.weights);
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Five task probabilities for one example.
    pub fn forward(&self, bundle: &FeatureBundle) -> Result<[f64; NUM_TASKS], RankerError> {
        let mut ws = Workspace::new(&self.shape);
        self.forward_ws(bundle, &mut ws)
    }

    pub(crate) fn forward_ws(&self, bundle: &FeatureBundle, ws: &mut Workspace) -> Result<[f64; NUM_TASKS], RankerError> {
        self.build_input(bundle, ws)?;
        let mut prev: &[f64] = &ws.input;
        for (l, layer) in self.trunk.iter().enumerate() {
            let pre = &mut ws.pre[l];
            layer.forward(prev, pre);
            let act = &mut ws.act[l];
            for (a, &p) in act.iter_mut().zip(pre.iter()) {
                *a = p.max(0.0);
            }
            prev = &ws.act[l];
        }
        let mut logits = [0.0; NUM_TASKS];
        self.heads.forward(prev, &mut logits);
        let mut probs = [0.0; NUM_TASKS];
        for (p, &z) in probs.iter_mut().zip(&logits) {
            if !z.is_finite() {
                return Err(RankerError::NonFiniteActivation);
            }
            *p = sigmoid(z);
        }
        ws.probs = probs;
        Ok(probs)
    }

    fn check_ids(&self, table: TableId, ids: &[u32]) -> Result<(), RankerError> {
        let rows = self.table(table).rows;
        match ids.iter().find(|&&id| id as usize >= rows) {
            Some(&id) => Err(RankerError::IdOutOfRange {
                table: table.name(),
                id: id as usize,
                rows,
            }),
            None => Ok(()),
        }
    }

    fn build_input(&self, b: &FeatureBundle, ws: &mut Workspace) -> Result<(), RankerError> {
        let d = self.shape.embed_dim;
        let v = self.shape.visual_dim;
        self.check_ids(TableId::User, &[b.user_idx])?;
        self.check_ids(TableId::Item, &[b.item_idx])?;
        let x = &mut ws.input;
        x[..d].copy_from_slice(self.table(TableId::User).row(b.user_idx as usize));
        x[d..2 * d].copy_from_slice(self.table(TableId::Item).row(b.item_idx as usize));

        let vis = &mut x[2 * d..2 * d + v];
        if self.enabled.contains(FeatureGroup::Visual) {
            if b.visual.len() != v {
                return Err(RankerError::VisualDim {
                    expected: v,
                    got: b.visual.len(),
                });
            }
            vis.copy_from_slice(&b.visual);
        } else {
            vis.fill(0.0);
        }

        let tok = &mut x[2 * d + v..3 * d + v];
        tok.fill(0.0);
        if self.enabled.contains(FeatureGroup::ItemTokens) {
            self.check_ids(TableId::ItemTokens, b.item_tokens.ids())?;
            pool_into(b.item_tokens.ids(), self.table(TableId::ItemTokens), tok);
        }

        let prof = &mut x[3 * d + v..4 * d + v];
        prof.fill(0.0);
        ws.profile_types = 0;
        if self.enabled.contains(FeatureGroup::ProfileTokens) {
            let table = self.table(TableId::ProfileTokens);
            let mut n_types = 0usize;
            for list in &b.profile_tokens {
                if list.is_empty() {
                    continue;
                }
                self.check_ids(TableId::ProfileTokens, list.ids())?;
                let inv = 1.0 / list.len() as f64;
                for &id in list.ids() {
                    for (p, &w) in prof.iter_mut().zip(table.row(id as usize)) {
                        *p += w * inv;
                    }
                }
                n_types += 1;
            }
            if n_types > 0 {
                let inv = 1.0 / NUM_TASKS as f64;
                prof.iter_mut().for_each(|p| *p *= inv);
            }
            ws.profile_types = n_types;
        }
        Ok(())
    }

    /// Accumulates `scale × ∂loss/∂θ` for the example last run through
    /// `forward_ws` with the same workspace.
    pub(crate) fn backward_ws(&self, b: &FeatureBundle, ws: &mut Workspace, scale: f64, grads: &mut Gradients) {
        let d = self.shape.embed_dim;
        let v = self.shape.visual_dim;
        // ∂(BCE)/∂logit = p - y on the unclamped probability.
        let mut delta_heads = [0.0; NUM_TASKS];
        for (k, dz) in delta_heads.iter_mut().enumerate() {
            *dz = scale * (ws.probs[k] - f64::from(b.labels[k]));
        }
        let last_act: &[f64] = match self.trunk.len() {
            0 => &ws.input,
            n => &ws.act[n - 1],
        };
        accumulate_dense(&self.heads, &mut grads.heads, last_act, &delta_heads);

        // Propagate into the last hidden activation.
        let n_layers = self.trunk.len();
        let (mut delta, mut next_delta) = (std::mem::take(&mut ws.delta_a), std::mem::take(&mut ws.delta_b));
        delta.clear();
        delta.resize(self.heads.inputs, 0.0);
        backprop_input(&self.heads, &delta_heads, &mut delta);

        for l in (0..n_layers).rev() {
            let layer = &self.trunk[l];
            for (dv, &p) in delta.iter_mut().zip(&ws.pre[l]) {
                if p <= 0.0 {
                    *dv = 0.0;
                }
            }
            let input: &[f64] = if l == 0 { &ws.input } else { &ws.act[l - 1] };
            accumulate_dense(layer, &mut grads.trunk[l], input, &delta);
            next_delta.clear();
            next_delta.resize(layer.inputs, 0.0);
            backprop_input(layer, &delta, &mut next_delta);
            std::mem::swap(&mut delta, &mut next_delta);
        }
        // `delta` is now ∂/∂input.
        add_row(&mut grads.tables[TableId::User as usize], b.user_idx, &delta[..d], 1.0);
        add_row(&mut grads.tables[TableId::Item as usize], b.item_idx, &delta[d..2 * d], 1.0);

        if self.enabled.contains(FeatureGroup::ItemTokens) && !b.item_tokens.is_empty() {
            let g = &delta[2 * d + v..3 * d + v];
            let w = 1.0 / b.item_tokens.len() as f64;
            for &id in b.item_tokens.ids() {
                add_row(&mut grads.tables[TableId::ItemTokens as usize], id, g, w);
            }
        }
        if self.enabled.contains(FeatureGroup::ProfileTokens) && ws.profile_types > 0 {
            let g = &delta[3 * d + v..4 * d + v];
            let type_w = 1.0 / NUM_TASKS as f64;
            for list in b.profile_tokens.iter().filter(|l| !l.is_empty()) {
                let w = type_w / list.len() as f64;
                for &id in list.ids() {
                    add_row(&mut grads.tables[TableId::ProfileTokens as usize], id, g, w);
                }
            }
        }
        ws.delta_a = delta;
        ws.delta_b = next_delta;
    }

    /// Mean summed-task loss over a batch and its analytic gradient.
    pub fn loss_and_gradient(&self, batch: &[FeatureBundle]) -> Result<(f64, Gradients), RankerError> {
        let mut ws = Workspace::new(&self.shape);
        let mut grads = Gradients::new(self);
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut total = 0.0;
        for b in batch {
            let p = self.forward_ws(b, &mut ws)?;
            total += loss(&p, &b.labels);
            self.backward_ws(b, &mut ws, scale, &mut grads);
        }
        Ok((total * scale, grads))
    }

    /// Mean summed-task loss over a batch, forward only.
    pub fn batch_loss(&self, batch: &[FeatureBundle]) -> Result<f64, RankerError> {
        let mut ws = Workspace::new(&self.shape);
        let mut total = 0.0;
        for b in batch {
            total += loss(&self.forward_ws(b, &mut ws)?, &b.labels);
        }
        Ok(total / batch.len().max(1) as f64)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn accumulate_dense(layer: &Dense, g: &mut DenseGrad, input: &[f64], delta: &[f64]) {
    for (o, &dv) in delta.iter().enumerate() {
        if dv == 0.0 {
            continue;
        }
        g.bias[o] += dv;
        let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
        for (w, &x) in row.iter_mut().zip(input) {
            *w += dv * x;
        }
    }
}

fn backprop_input(layer: &Dense, delta: &[f64], out: &mut [f64]) {
    for (o, &dv) in delta.iter().enumerate() {
        if dv == 0.0 {
            continue;
        }
        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
        for (x, &w) in out.iter_mut().zip(row) {
            *x += dv * w;
        }
    }
}

fn add_row(g: &mut SparseRows, id: u32, values: &[f64], weight: f64) {
    let row = g.row_mut(id);
    for (r, &v) in row.iter_mut().zip(values) {
        *r += weight * v;
    }
}

/// Mean of the indexed rows; an empty list pools to zeros.
pub fn pool(tokens: &TokenIdList, table: &EmbeddingTable) -> Result<Vec<f64>, RankerError> {
    if let Some(&id) = tokens.ids().iter().find(|&&id| id as usize >= table.rows) {
        return Err(RankerError::IdOutOfRange {
            table: "token",
            id: id as usize,
            rows: table.rows,
        });
    }
    let mut out = vec![0.0; table.dim];
    pool_into(tokens.ids(), table, &mut out);
    Ok(out)
}

fn pool_into(ids: &[u32], table: &EmbeddingTable, out: &mut [f64]) {
    if ids.is_empty() {
        return;
    }
    let inv = 1.0 / ids.len() as f64;
    for &id in ids {
        for (o, &w) in out.iter_mut().zip(table.row(id as usize)) {
            *o += w * inv;
        }
    }
}

/// Summed binary cross-entropy over the five tasks.
pub fn loss(probs: &[f64; NUM_TASKS], labels: &[u8; NUM_TASKS]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// Per-example scratch buffers for forward and backward passes.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    probs: [f64; NUM_TASKS],
    profile_types: usize,
    delta_a: Vec<f64>,
    delta_b: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(shape: &ModelShape) -> Self {
        Self {
            input: vec![0.0; shape.input_width()],
            pre: shape.hidden.iter().map(|&h| vec![0.0; h]).collect(),
            act: shape.hidden.iter().map(|&h| vec![0.0; h]).collect(),
            probs: [0.0; NUM_TASKS],
            profile_types: 0,
            delta_a: Vec::new(),
            delta_b: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn clear(&mut self) {
        self.weights.fill(0.0);
        self.bias.fill(0.0);
    }
}

/// Gradient rows for the embedding rows touched by a batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    dim: usize,
    slots: HashMap<u32, usize>,
    rows: Vec<u32>,
    data: Vec<f64>,
}

impl SparseRows {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let dim = self.dim;
        let slot = match self.slots.get(&id) {
            Some(&s) => s,
            None => {
                let s = self.rows.len();
                self.slots.insert(id, s);
                self.rows.push(id);
                self.data.resize(self.data.len() + dim, 0.0);
                s
            }
        };
        &mut self.data[slot * dim..(slot + 1) * dim]
    }

    fn clear(&mut self) {
        self.slots.clear();
        self.rows.clear();
        self.data.clear();
    }

    /// `(row id, gradient row)` pairs in first-touch order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows
            .iter()
            .enumerate()
            .map(move |(s, &id)| (id, &self.data[s * self.dim..(s + 1) * self.dim]))
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tables: [SparseRows; 4],
    pub trunk: Vec<DenseGrad>,
    pub heads: DenseGrad,
}

impl Gradients {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            tables: params.tables.each_ref().map(|t| SparseRows::new(t.dim)),
            trunk: params.trunk.iter().map(DenseGrad::zeros_like).collect(),
            heads: DenseGrad::zeros_like(&params.heads),
        }
    }

    pub fn clear(&mut self) {
        self.tables.iter_mut().for_each(SparseRows::clear);
        self.trunk.iter_mut().for_each(DenseGrad::clear);
        self.heads.clear();
    }

    pub fn table(&self, t: TableId) -> &SparseRows {
        &self.tables[t as usize]
    }

    /// Dense gradient in the order of [`ModelParams::flat_values`].
    pub fn to_dense(&self, params: &ModelParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.n_params());
        for (g, t) in self.tables.iter().zip(&params.tables) {
            let mut dense = vec![0.0; t.weights.len()];
            for (id, row) in g.iter() {
                dense[id as usize * t.dim..(id as usize + 1) * t.dim].copy_from_slice(row);
            }
            out.extend(dense);
        }
        for g in self.trunk.iter().chain(std::iter::once(&self.heads)) {
            out.extend(&g.weights);
            out.extend(&g.bias);
        }
        out
    }
}
