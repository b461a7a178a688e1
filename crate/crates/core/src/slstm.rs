//! Two-dimensional spatial LSTM.
//!
//! The lattice is walked in raster order. The state at (i, j) sees a small
//! causal window of raw pixels plus the hidden states of the left and top
//! neighbors, and carries two forget gates, one per predecessor cell:
//!
//! ```text
//! z    = [window pixels, h(i,j-1), h(i-1,j)]
//! i,fl,ft,o = sigmoid(W z + b)          (input, forget-left, forget-top, output)
//! g    = tanh(Wg z + bg)
//! cell = i*g + fl*cell(i,j-1) + ft*cell(i-1,j)
//! h    = o * tanh(cell)
//! ```
//!
//! Out-of-image neighbors contribute zero state. The backward pass walks the
//! lattice in reverse raster order and routes gradients through both cell
//! links, both hidden links, and the window taps, so a loss at any pixel
//! reaches every pixel before it in the causal order.

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::rng::SeededRng;

/// Strictly causal pixel offsets feeding the recurrence at each site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalWindow {
    offsets: Vec<(i32, i32)>,
}

impl CausalWindow {
    pub fn new(offsets: Vec<(i32, i32)>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidArg("causal window must not be empty".into()));
        }
        for &(dr, dc) in &offsets {
            let causal = dr < 0 || (dr == 0 && dc < 0);
            if !causal {
                return Err(Error::InvalidArg(format!(
                    "window offset ({dr},{dc}) is not strictly causal"
                )));
            }
        }
        Ok(CausalWindow { offsets })
    }

    /// The smallest window covering both axes: three top neighbors plus left.
    pub fn default_four() -> Self {
        CausalWindow {
            offsets: vec![(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }
}

const GATE_COUNT: usize = 5;

/// Weights for the five gates. Each matrix maps the concatenated input
/// `z = [window, h_left, h_top]` (length `input_dim + 2*hidden`) to the
/// hidden dimension, stored row-major by hidden unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SlstmParams {
    hidden: usize,
    input_dim: usize,
    pub w_input: Vec<f64>,
    pub w_forget_left: Vec<f64>,
    pub w_forget_top: Vec<f64>,
    pub w_output: Vec<f64>,
    pub w_candidate: Vec<f64>,
    pub b_input: Vec<f64>,
    pub b_forget_left: Vec<f64>,
    pub b_forget_top: Vec<f64>,
    pub b_output: Vec<f64>,
    pub b_candidate: Vec<f64>,
}

impl SlstmParams {
    pub fn zeros(hidden: usize, input_dim: usize) -> Self {
        assert!(hidden >= 1 && input_dim >= 1);
        let z = input_dim + 2 * hidden;
        SlstmParams {
            hidden,
            input_dim,
            w_input: vec![0.0; hidden * z],
            w_forget_left: vec![0.0; hidden * z],
            w_forget_top: vec![0.0; hidden * z],
            w_output: vec![0.0; hidden * z],
            w_candidate: vec![0.0; hidden * z],
            b_input: vec![0.0; hidden],
            b_forget_left: vec![0.0; hidden],
            b_forget_top: vec![0.0; hidden],
            b_output: vec![0.0; hidden],
            b_candidate: vec![0.0; hidden],
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` weights; forget biases start at +1 so early
    /// training does not wash the state out.
    pub fn init_random(hidden: usize, input_dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(hidden, input_dim);
        let bound = 1.0 / ((input_dim + 2 * hidden) as f64).sqrt();
        for w in [
            &mut p.w_input,
            &mut p.w_forget_left,
            &mut p.w_forget_top,
            &mut p.w_output,
            &mut p.w_candidate,
        ] {
            for v in w.iter_mut() {
                *v = bound * (2.0 * rng.next_uniform() - 1.0);
            }
        }
        for v in &mut p.b_forget_left {
            *v = 1.0;
        }
        for v in &mut p.b_forget_top {
            *v = 1.0;
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn z_dim(&self) -> usize {
        self.input_dim + 2 * self.hidden
    }

    pub fn param_count(&self) -> usize {
        GATE_COUNT * (self.hidden * self.z_dim() + self.hidden)
    }

    fn weight_matrices(&self) -> [&Vec<f64>; GATE_COUNT] {
        [
            &self.w_input,
            &self.w_forget_left,
            &self.w_forget_top,
            &self.w_output,
            &self.w_candidate,
        ]
    }

    pub(crate) fn zeros_like(&self) -> SlstmParams {
        SlstmParams::zeros(self.hidden, self.input_dim)
    }

    pub(crate) fn add_scaled(&mut self, other: &SlstmParams, scale: f64) {
        let pairs: [(&mut Vec<f64>, &Vec<f64>); 10] = [
            (&mut self.w_input, &other.w_input),
            (&mut self.b_input, &other.b_input),
            (&mut self.w_forget_left, &other.w_forget_left),
            (&mut self.b_forget_left, &other.b_forget_left),
            (&mut self.w_forget_top, &other.w_forget_top),
            (&mut self.b_forget_top, &other.b_forget_top),
            (&mut self.w_output, &other.w_output),
            (&mut self.b_output, &other.b_output),
            (&mut self.w_candidate, &other.w_candidate),
            (&mut self.b_candidate, &other.b_candidate),
        ];
        for (dst, src) in pairs {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub(crate) fn push_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w_input);
        out.extend_from_slice(&self.b_input);
        out.extend_from_slice(&self.w_forget_left);
        out.extend_from_slice(&self.b_forget_left);
        out.extend_from_slice(&self.w_forget_top);
        out.extend_from_slice(&self.b_forget_top);
        out.extend_from_slice(&self.w_output);
        out.extend_from_slice(&self.b_output);
        out.extend_from_slice(&self.w_candidate);
        out.extend_from_slice(&self.b_candidate);
    }

    pub(crate) fn read_flat(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for dst in [
            &mut self.w_input,
            &mut self.b_input,
            &mut self.w_forget_left,
            &mut self.b_forget_left,
            &mut self.w_forget_top,
            &mut self.b_forget_top,
            &mut self.w_output,
            &mut self.b_output,
            &mut self.w_candidate,
            &mut self.b_candidate,
        ] {
            let len = dst.len();
            dst.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        off
    }

    pub fn all_finite(&self) -> bool {
        self.weight_matrices().iter().all(|w| w.iter().all(|v| v.is_finite()))
            && [
                &self.b_input,
                &self.b_forget_left,
                &self.b_forget_top,
                &self.b_output,
                &self.b_candidate,
            ]
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Raster-scan forward pass. The returned grid keeps the full activation
    /// cache needed by [`SlstmParams::backward`].
    pub fn forward(&self, image: &Grid2D, window: &CausalWindow) -> Result<HiddenGrid> {
        if window.len() != self.input_dim {
            return Err(Error::shape(
                "slstm forward window",
                format!("{}", self.input_dim),
                format!("{}", window.len()),
            ));
        }
        if !image.all_finite() {
            return Err(Error::NonFinite("image passed to slstm forward".into()));
        }
        let (rows, cols) = (image.rows(), image.cols());
        let hd = self.hidden;
        let zd = self.z_dim();
        let n = rows * cols;
        let mut grid = HiddenGrid {
            rows,
            cols,
            hidden: hd,
            h: vec![0.0; n * hd],
            cell: vec![0.0; n * hd],
            z: vec![0.0; n * zd],
            gate_i: vec![0.0; n * hd],
            gate_fl: vec![0.0; n * hd],
            gate_ft: vec![0.0; n * hd],
            gate_o: vec![0.0; n * hd],
            cand_tanh: vec![0.0; n * hd],
            cell_tanh: vec![0.0; n * hd],
            window: window.clone(),
        };
        let zeros = vec![0.0; hd];

        for r in 0..rows {
            for c in 0..cols {
                let pix = r * cols + c;
                // Assemble z = [window, h_left, h_top]; out-of-image reads are zero.
                {
                    let z = &mut grid.z[pix * zd..(pix + 1) * zd];
                    for (t, &(dr, dc)) in window.offsets().iter().enumerate() {
                        let rr = r as i64 + dr as i64;
                        let cc = c as i64 + dc as i64;
                        z[t] = if rr >= 0 && cc >= 0 && (cc as usize) < cols {
                            image.get(rr as usize, cc as usize)
                        } else {
                            0.0
                        };
                    }
                    let h_left = if c > 0 {
                        &grid.h[(pix - 1) * hd..pix * hd]
                    } else {
                        &zeros[..]
                    };
                    z[self.input_dim..self.input_dim + hd].copy_from_slice(h_left);
                    let h_top = if r > 0 {
                        &grid.h[(pix - cols) * hd..(pix - cols + 1) * hd]
                    } else {
                        &zeros[..]
                    };
                    z[self.input_dim + hd..].copy_from_slice(h_top);
                }

                for k in 0..hd {
                    let z = &grid.z[pix * zd..(pix + 1) * zd];
                    let c_left = if c > 0 { grid.cell[(pix - 1) * hd + k] } else { 0.0 };
                    let c_top = if r > 0 { grid.cell[(pix - cols) * hd + k] } else { 0.0 };
                    let gi = sigmoid(dot_row(&self.w_input, k, zd, z) + self.b_input[k]);
                    let gfl = sigmoid(dot_row(&self.w_forget_left, k, zd, z) + self.b_forget_left[k]);
                    let gft = sigmoid(dot_row(&self.w_forget_top, k, zd, z) + self.b_forget_top[k]);
                    let go = sigmoid(dot_row(&self.w_output, k, zd, z) + self.b_output[k]);
                    let cand = (dot_row(&self.w_candidate, k, zd, z) + self.b_candidate[k]).tanh();
                    let cell = gi * cand + gfl * c_left + gft * c_top;
                    let ct = cell.tanh();
                    let h = go * ct;
                    if !h.is_finite() || !cell.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "slstm state exploded at pixel ({r},{c}), unit {k}"
                        )));
                    }
                    let at = pix * hd + k;
                    grid.gate_i[at] = gi;
                    grid.gate_fl[at] = gfl;
                    grid.gate_ft[at] = gft;
                    grid.gate_o[at] = go;
                    grid.cand_tanh[at] = cand;
                    grid.cell[at] = cell;
                    grid.cell_tanh[at] = ct;
                    grid.h[at] = h;
                }
            }
        }
        Ok(grid)
    }

    /// Reverse-mode pass. `upstream` is dL/dh, flattened rows*cols*hidden.
    /// Returns dL/d(image) and the parameter gradients.
    pub fn backward(&self, grid: &HiddenGrid, upstream: &[f64]) -> Result<(Grid2D, SlstmParams)> {
        let mut dparams = self.zeros_like();
        let dimage = self.backward_impl(grid, upstream, Some(&mut dparams))?;
        Ok((dimage, dparams))
    }

    /// Input-gradient-only variant for the inference hot path (skips the
    /// rank-1 weight-gradient accumulation, which dominates otherwise).
    pub fn backward_input(&self, grid: &HiddenGrid, upstream: &[f64]) -> Result<Grid2D> {
        self.backward_impl(grid, upstream, None)
    }

    fn backward_impl(
        &self,
        grid: &HiddenGrid,
        upstream: &[f64],
        mut dparams: Option<&mut SlstmParams>,
    ) -> Result<Grid2D> {
        let (rows, cols, hd) = (grid.rows, grid.cols, grid.hidden);
        if hd != self.hidden {
            return Err(Error::shape(
                "slstm backward",
                format!("hidden {}", self.hidden),
                format!("hidden {hd}"),
            ));
        }
        let n = rows * cols;
        if upstream.len() != n * hd {
            return Err(Error::shape(
                "slstm backward upstream",
                format!("{}", n * hd),
                format!("{}", upstream.len()),
            ));
        }
        let zd = self.z_dim();
        let din = self.input_dim;
        // backward must be paired with the window the forward pass used.
        let window = &grid.window;
        if window.len() != din {
            return Err(Error::shape(
                "slstm backward window",
                format!("{din}"),
                format!("{}", window.len()),
            ));
        }

        let mut dh_acc = vec![0.0; n * hd];
        let mut dc_acc = vec![0.0; n * hd];
        let mut dimage = Grid2D::zeros(rows, cols);
        let mut dz = vec![0.0; zd];
        let mut dpre = vec![0.0; GATE_COUNT * hd];

        for r in (0..rows).rev() {
            for c in (0..cols).rev() {
                let pix = r * cols + c;
                let z = &grid.z[pix * zd..(pix + 1) * zd];
                dz.iter_mut().for_each(|v| *v = 0.0);

                for k in 0..hd {
                    let at = pix * hd + k;
                    let dh = upstream[at] + dh_acc[at];
                    let go = grid.gate_o[at];
                    let ct = grid.cell_tanh[at];
                    let dcell = dh * go * (1.0 - ct * ct) + dc_acc[at];

                    let gi = grid.gate_i[at];
                    let gfl = grid.gate_fl[at];
                    let gft = grid.gate_ft[at];
                    let cand = grid.cand_tanh[at];
                    let c_left = if c > 0 { grid.cell[at - hd] } else { 0.0 };
                    let c_top = if r > 0 { grid.cell[at - cols * hd] } else { 0.0 };

                    let dpre_o = dh * ct * go * (1.0 - go);
                    let dpre_i = dcell * cand * gi * (1.0 - gi);
                    let dpre_cand = dcell * gi * (1.0 - cand * cand);
                    let dpre_fl = dcell * c_left * gfl * (1.0 - gfl);
                    let dpre_ft = dcell * c_top * gft * (1.0 - gft);

                    dpre[k] = dpre_i;
                    dpre[hd + k] = dpre_fl;
                    dpre[2 * hd + k] = dpre_ft;
                    dpre[3 * hd + k] = dpre_o;
                    dpre[4 * hd + k] = dpre_cand;

                    if c > 0 {
                        dc_acc[at - hd] += dcell * gfl;
                    }
                    if r > 0 {
                        dc_acc[at - cols * hd] += dcell * gft;
                    }
                }

                // dz += W' dpre for each gate; then scatter dz.
                for (g, w) in self.weight_matrices().into_iter().enumerate() {
                    for k in 0..hd {
                        let coeff = dpre[g * hd + k];
                        if coeff != 0.0 {
                            let row = &w[k * zd..(k + 1) * zd];
                            for j in 0..zd {
                                dz[j] += coeff * row[j];
                            }
                        }
                    }
                }

                if let Some(dp) = dparams.as_deref_mut() {
                    let mats: [&mut Vec<f64>; GATE_COUNT] = [
                        &mut dp.w_input,
                        &mut dp.w_forget_left,
                        &mut dp.w_forget_top,
                        &mut dp.w_output,
                        &mut dp.w_candidate,
                    ];
                    for (g, w) in mats.into_iter().enumerate() {
                        for k in 0..hd {
                            let coeff = dpre[g * hd + k];
                            if coeff != 0.0 {
                                let row = &mut w[k * zd..(k + 1) * zd];
                                for j in 0..zd {
                                    row[j] += coeff * z[j];
                                }
                            }
                        }
                    }
                    for k in 0..hd {
                        dp.b_input[k] += dpre[k];
                        dp.b_forget_left[k] += dpre[hd + k];
                        dp.b_forget_top[k] += dpre[2 * hd + k];
                        dp.b_output[k] += dpre[3 * hd + k];
                        dp.b_candidate[k] += dpre[4 * hd + k];
                    }
                }

                for (t, &(dr, dc)) in window.offsets().iter().enumerate() {
                    let rr = r as i64 + dr as i64;
                    let cc = c as i64 + dc as i64;
                    if rr >= 0 && cc >= 0 && (cc as usize) < cols {
                        let v = dimage.get(rr as usize, cc as usize) + dz[t];
                        dimage.set(rr as usize, cc as usize, v);
                    }
                }
                if c > 0 {
                    let dst = &mut dh_acc[(pix - 1) * hd..pix * hd];
                    for (d, s) in dst.iter_mut().zip(&dz[din..din + hd]) {
                        *d += s;
                    }
                }
                if r > 0 {
                    let dst = &mut dh_acc[(pix - cols) * hd..(pix - cols + 1) * hd];
                    for (d, s) in dst.iter_mut().zip(&dz[din + hd..]) {
                        *d += s;
                    }
                }
            }
        }
        Ok(dimage)
    }

    /// Single-cell step for incremental (sampling) use. `z` must already hold
    /// `[window, h_left, h_top]`; empty neighbor slices mean border zeros.
    pub(crate) fn step_cell(
        &self,
        z: &[f64],
        c_left: &[f64],
        c_top: &[f64],
        h_out: &mut [f64],
        c_out: &mut [f64],
    ) {
        let zd = self.z_dim();
        debug_assert_eq!(z.len(), zd);
        for k in 0..self.hidden {
            let cl = if c_left.is_empty() { 0.0 } else { c_left[k] };
            let ct_in = if c_top.is_empty() { 0.0 } else { c_top[k] };
            let gi = sigmoid(dot_row(&self.w_input, k, zd, z) + self.b_input[k]);
            let gfl = sigmoid(dot_row(&self.w_forget_left, k, zd, z) + self.b_forget_left[k]);
            let gft = sigmoid(dot_row(&self.w_forget_top, k, zd, z) + self.b_forget_top[k]);
            let go = sigmoid(dot_row(&self.w_output, k, zd, z) + self.b_output[k]);
            let cand = (dot_row(&self.w_candidate, k, zd, z) + self.b_candidate[k]).tanh();
            let cell = gi * cand + gfl * cl + gft * ct_in;
            c_out[k] = cell;
            h_out[k] = go * cell.tanh();
        }
    }
}

#[inline]
fn dot_row(w: &[f64], k: usize, zd: usize, z: &[f64]) -> f64 {
    let row = &w[k * zd..(k + 1) * zd];
    let mut acc = 0.0;
    for j in 0..zd {
        acc += row[j] * z[j];
    }
    acc
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-pixel hidden and cell states plus the forward cache for backprop.
#[derive(Debug, Clone)]
pub struct HiddenGrid {
    rows: usize,
    cols: usize,
    hidden: usize,
    h: Vec<f64>,
    cell: Vec<f64>,
    z: Vec<f64>,
    gate_i: Vec<f64>,
    gate_fl: Vec<f64>,
    gate_ft: Vec<f64>,
    gate_o: Vec<f64>,
    cand_tanh: Vec<f64>,
    cell_tanh: Vec<f64>,
    window: CausalWindow,
}

impl HiddenGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// The feature vector h(i,j) summarizing the causal context of (i, j).
    pub fn feature(&self, r: usize, c: usize) -> &[f64] {
        let pix = r * self.cols + c;
        &self.h[pix * self.hidden..(pix + 1) * self.hidden]
    }

    pub fn h_flat(&self) -> &[f64] {
        &self.h
    }
}
