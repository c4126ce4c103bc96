use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Architecture of a [`ConvNet`].
///
/// Layer `l` is a 3x3 convolution with dilation `dilations[l]`, an optional
/// feature-wise affine modulation `z (1 + a) + b` whose `(a, b)` are a
/// linear function of a conditioning vector, and a SiLU. Every layer after
/// the first adds its input back (residual). A 1x1 convolution maps the last
/// hidden state to `out_channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvNetSpec {
    pub in_channels: usize,
    pub hidden: usize,
    pub dilations: Vec<usize>,
    /// Length of the conditioning vector; 0 disables modulation.
    pub cond_dim: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    cin: usize,
    dil: usize,
    weight: usize,
    bias: usize,
    film_w: usize,
    film_b: usize,
}

impl ConvNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden == 0 || self.out_channels == 0 {
            return Err(Error::Parameter("channel counts must be positive".into()));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Parameter("need at least one layer with dilation >= 1".into()));
        }
        Ok(())
    }

    fn layers(&self) -> (Vec<LayerLayout>, usize, usize, usize) {
        let mut off = 0;
        let mut layers = Vec::with_capacity(self.dilations.len());
        for (l, &dil) in self.dilations.iter().enumerate() {
            let cin = if l == 0 { self.in_channels } else { self.hidden };
            let weight = off;
            off += self.hidden * cin * 9;
            let bias = off;
            off += self.hidden;
            let film_w = off;
            off += 2 * self.hidden * self.cond_dim;
            let film_b = off;
            if self.cond_dim > 0 {
                off += 2 * self.hidden;
            }
            layers.push(LayerLayout {
                cin,
                dil,
                weight,
                bias,
                film_w,
                film_b,
            });
        }
        let head_w = off;
        off += self.out_channels * self.hidden;
        let head_b = off;
        off += self.out_channels;
        (layers, head_w, head_b, off)
    }

    pub fn param_count(&self) -> usize {
        self.layers().3
    }

    /// Side length of the square receptive field in bins.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * self.dilations.iter().sum::<usize>()
    }

    /// Compact textual descriptor, used to tag checkpoints.
    pub fn descriptor(&self) -> String {
        let dil: Vec<String> = self.dilations.iter().map(|d| d.to_string()).collect();
        format!(
            "conv3x3(in={},hidden={},dil=[{}],cond={},out={})",
            self.in_channels,
            self.hidden,
            dil.join(","),
            self.cond_dim,
            self.out_channels
        )
    }
}

/// Intermediate values kept by a forward pass for [`ConvNet::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    height: usize,
    width: usize,
    /// Layer inputs `h_0 .. h_L`.
    hs: Vec<Vec<f64>>,
    /// Pre-modulation convolution outputs (only with conditioning).
    pre: Vec<Vec<f64>>,
    /// Activation inputs.
    act_in: Vec<Vec<f64>>,
    /// Per-layer modulation `(a, b)`.
    film: Vec<(Vec<f64>, Vec<f64>)>,
    cond: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvNet {
    spec: ConvNetSpec,
    layers: Vec<LayerLayout>,
    head_w: usize,
    head_b: usize,
    n_params: usize,
}

// C[m x n] = beta C + A[m x k] B[k x n], operands optionally transposed
// (row-major storage).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold at least m*k, k*n and m*n elements and the
    // strides describe dense row-major (or transposed) matrices inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(src: &[f64], channels: usize, h: usize, w: usize, dil: usize, col: &mut [f64]) {
    let p = h * w;
    for c in 0..channels {
        let plane = &src[c * p..(c + 1) * p];
        for (k, (dy, dx)) in TAPS.iter().enumerate() {
            let row = &mut col[(c * 9 + k) * p..(c * 9 + k + 1) * p];
            let oy = dy * dil as isize;
            let ox = dx * dil as isize;
            for i in 0..h {
                let si = i as isize + oy;
                let out = &mut row[i * w..(i + 1) * w];
                if si < 0 || si >= h as isize {
                    out.fill(0.0);
                    continue;
                }
                let src_row = &plane[si as usize * w..(si as usize + 1) * w];
                let (lo, hi) = valid_span(w, ox);
                out[..lo].fill(0.0);
                out[hi..].fill(0.0);
                let shift = |j: usize| (j as isize + ox) as usize;
                if hi > lo {
                    out[lo..hi].copy_from_slice(&src_row[shift(lo)..shift(lo) + (hi - lo)]);
                }
            }
        }
    }
}

fn col2im(col: &[f64], channels: usize, h: usize, w: usize, dil: usize, dst: &mut [f64]) {
    let p = h * w;
    for c in 0..channels {
        let plane = &mut dst[c * p..(c + 1) * p];
        for (k, (dy, dx)) in TAPS.iter().enumerate() {
            let row = &col[(c * 9 + k) * p..(c * 9 + k + 1) * p];
            let oy = dy * dil as isize;
            let ox = dx * dil as isize;
            let (lo, hi) = valid_span(w, ox);
            if hi <= lo {
                continue;
            }
            for i in 0..h {
                let si = i as isize + oy;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let base = si as usize * w;
                let start = (lo as isize + ox) as usize;
                let d = &mut plane[base + start..base + start + (hi - lo)];
                for (dv, cv) in d.iter_mut().zip(&row[i * w + lo..i * w + hi]) {
                    *dv += cv;
                }
            }
        }
    }
}

// Output columns j with 0 <= j + ox < w.
fn valid_span(w: usize, ox: isize) -> (usize, usize) {
    let lo = (-ox).max(0) as usize;
    let hi = (w as isize - ox.max(0)).max(0) as usize;
    (lo.min(w), hi.min(w))
}

const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ConvNet {
    pub fn new(spec: ConvNetSpec) -> Result<Self> {
        spec.validate()?;
        let (layers, head_w, head_b, n_params) = spec.layers();
        Ok(Self {
            spec,
            layers,
            head_w,
            head_b,
            n_params,
        })
    }

    pub fn spec(&self) -> &ConvNetSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    /// He-style initialization; the head starts small so the network output
    /// is close to zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.n_params];
        let mut fill = |params: &mut [f64], std: f64| {
            for v in params.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = z * std;
            }
        };
        let hidden = self.spec.hidden;
        for (l, layer) in self.layers.iter().enumerate() {
            let fan_in = (layer.cin * 9) as f64;
            // residual layers are damped so the stack starts near identity
            let gain = if l == 0 { 1.0 } else { 0.5 };
            fill(
                &mut params[layer.weight..layer.weight + hidden * layer.cin * 9],
                gain * (2.0 / fan_in).sqrt(),
            );
            if self.spec.cond_dim > 0 {
                fill(
                    &mut params[layer.film_w..layer.film_w + 2 * hidden * self.spec.cond_dim],
                    0.1 / (self.spec.cond_dim as f64).sqrt(),
                );
            }
        }
        fill(
            &mut params[self.head_w..self.head_w + self.spec.out_channels * hidden],
            0.01 / (hidden as f64).sqrt(),
        );
        params
    }

    fn check(&self, params: &[f64], input: &[f64], h: usize, w: usize, cond: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        if input.len() != self.spec.in_channels * h * w {
            return Err(Error::Shape(format!(
                "input holds {} values, expected {}x{}x{}",
                input.len(),
                self.spec.in_channels,
                h,
                w
            )));
        }
        if cond.len() != self.spec.cond_dim {
            return Err(Error::Shape(format!(
                "conditioning vector has {} entries, expected {}",
                cond.len(),
                self.spec.cond_dim
            )));
        }
        Ok(())
    }

    /// Forward pass over one `[in_channels, h, w]` input. Returns the
    /// `[out_channels, h, w]` output and, if `record`, the tape for
    /// [`ConvNet::backward`].
    pub fn forward(
        &self,
        params: &[f64],
        input: &[f64],
        h: usize,
        w: usize,
        cond: &[f64],
        record: bool,
    ) -> Result<(Vec<f64>, Option<Tape>)> {
        self.check(params, input, h, w, cond)?;
        let p = h * w;
        let hidden = self.spec.hidden;
        let film_on = self.spec.cond_dim > 0;
        let mut tape = Tape {
            height: h,
            width: w,
            hs: Vec::new(),
            pre: Vec::new(),
            act_in: Vec::new(),
            film: Vec::new(),
            cond: cond.to_vec(),
        };
        let mut cur = input.to_vec();
        let mut col = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            col.resize(layer.cin * 9 * p, 0.0);
            im2col(&cur, layer.cin, h, w, layer.dil, &mut col);
            let mut z = vec![0.0; hidden * p];
            for c in 0..hidden {
                z[c * p..(c + 1) * p].fill(params[layer.bias + c]);
            }
            gemm(
                hidden,
                layer.cin * 9,
                p,
                &params[layer.weight..],
                false,
                &col,
                false,
                1.0,
                &mut z,
            );
            let (a, b) = if film_on {
                self.film(params, layer, cond)
            } else {
                (Vec::new(), Vec::new())
            };
            let pre = if film_on && record { Some(z.clone()) } else { None };
            if film_on {
                for c in 0..hidden {
                    let (scale, shift) = (1.0 + a[c], b[c]);
                    z[c * p..(c + 1) * p]
                        .iter_mut()
                        .for_each(|v| *v = *v * scale + shift);
                }
            }
            let mut next: Vec<f64> = z.iter().map(|&v| v * sigmoid(v)).collect();
            if l > 0 {
                next.iter_mut().zip(&cur).for_each(|(n, c)| *n += c);
            }
            if record {
                tape.hs.push(std::mem::replace(&mut cur, next));
                tape.pre.push(pre.unwrap_or_default());
                tape.act_in.push(z);
                tape.film.push((a, b));
            } else {
                cur = next;
            }
        }
        let out_ch = self.spec.out_channels;
        let mut out = vec![0.0; out_ch * p];
        for c in 0..out_ch {
            out[c * p..(c + 1) * p].fill(params[self.head_b + c]);
        }
        gemm(out_ch, hidden, p, &params[self.head_w..], false, &cur, false, 1.0, &mut out);
        if record {
            tape.hs.push(cur);
            Ok((out, Some(tape)))
        } else {
            Ok((out, None))
        }
    }

    fn film(&self, params: &[f64], layer: &LayerLayout, cond: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden = self.spec.hidden;
        let d = self.spec.cond_dim;
        let mut ab = vec![0.0; 2 * hidden];
        for (r, v) in ab.iter_mut().enumerate() {
            let row = &params[layer.film_w + r * d..layer.film_w + (r + 1) * d];
            *v = params[layer.film_b + r] + row.iter().zip(cond).map(|(w, e)| w * e).sum::<f64>();
        }
        let b = ab.split_off(hidden);
        (ab, b)
    }

    /// Accumulates parameter gradients of a scalar loss into `grad` given
    /// `d_out = dL/d(output)`, and returns `dL/d(input)`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        d_out: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let (h, w) = (tape.height, tape.width);
        let p = h * w;
        let hidden = self.spec.hidden;
        let out_ch = self.spec.out_channels;
        if d_out.len() != out_ch * p || grad.len() != self.n_params || params.len() != self.n_params
        {
            return Err(Error::Shape("backward buffers do not match the network".into()));
        }
        let film_on = self.spec.cond_dim > 0;
        let last = &tape.hs[self.layers.len()];

        // head
        gemm(
            out_ch,
            p,
            hidden,
            d_out,
            false,
            last,
            true,
            1.0,
            &mut grad[self.head_w..self.head_w + out_ch * hidden],
        );
        for c in 0..out_ch {
            grad[self.head_b + c] += d_out[c * p..(c + 1) * p].iter().sum::<f64>();
        }
        let mut dh = vec![0.0; hidden * p];
        gemm(hidden, out_ch, p, &params[self.head_w..], true, d_out, false, 0.0, &mut dh);

        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act_in = &tape.act_in[l];
            // through SiLU
            let mut dz: Vec<f64> = dh
                .iter()
                .zip(act_in)
                .map(|(g, &z)| {
                    let s = sigmoid(z);
                    g * s * (1.0 + z * (1.0 - s))
                })
                .collect();
            if film_on {
                let (a, _) = &tape.film[l];
                let pre = &tape.pre[l];
                let d = self.spec.cond_dim;
                for c in 0..hidden {
                    let span = c * p..(c + 1) * p;
                    let da: f64 = dz[span.clone()].iter().zip(&pre[span.clone()]).map(|(g, z)| g * z).sum();
                    let db: f64 = dz[span.clone()].iter().sum();
                    for (r, gv) in [(c, da), (hidden + c, db)] {
                        grad[layer.film_b + r] += gv;
                        for (j, e) in tape.cond.iter().enumerate() {
                            grad[layer.film_w + r * d + j] += gv * e;
                        }
                    }
                    let scale = 1.0 + a[c];
                    dz[span].iter_mut().for_each(|v| *v *= scale);
                }
            }
            let input = &tape.hs[l];
            col.resize(layer.cin * 9 * p, 0.0);
            im2col(input, layer.cin, h, w, layer.dil, &mut col);
            let k = layer.cin * 9;
            gemm(
                hidden,
                p,
                k,
                &dz,
                false,
                &col,
                true,
                1.0,
                &mut grad[layer.weight..layer.weight + hidden * k],
            );
            for c in 0..hidden {
                grad[layer.bias + c] += dz[c * p..(c + 1) * p].iter().sum::<f64>();
            }
            dcol.resize(k * p, 0.0);
            gemm(k, hidden, p, &params[layer.weight..], true, &dz, false, 0.0, &mut dcol);
            let mut d_in = vec![0.0; layer.cin * p];
            col2im(&dcol, layer.cin, h, w, layer.dil, &mut d_in);
            if l > 0 {
                // residual path
                d_in.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
            }
            dh = d_in;
        }
        Ok(dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(cond_dim: usize) -> ConvNet {
        ConvNet::new(ConvNetSpec {
            in_channels: 3,
            hidden: 4,
            dilations: vec![1, 2, 1],
            cond_dim,
            out_channels: 2,
        })
        .unwrap()
    }

    // direct (non-GEMM) 3x3 dilated convolution for one output channel
    fn naive_conv(src: &[f64], cin: usize, h: usize, w: usize, dil: usize, weights: &[f64], bias: f64) -> Vec<f64> {
        let mut out = vec![bias; h * w];
        for i in 0..h {
            for j in 0..w {
                for c in 0..cin {
                    for (k, (dy, dx)) in TAPS.iter().enumerate() {
                        let si = i as isize + dy * dil as isize;
                        let sj = j as isize + dx * dil as isize;
                        if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                            out[i * w + j] += weights[c * 9 + k] * src[c * h * w + si as usize * w + sj as usize];
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_layer_matches_direct_convolution() {
        let net = ConvNet::new(ConvNetSpec {
            in_channels: 2,
            hidden: 3,
            dilations: vec![2],
            cond_dim: 0,
            out_channels: 1,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = net.init_params(&mut rng);
        let (h, w) = (6, 7);
        let input: Vec<f64> = (0..2 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, tape) = net.forward(&params, &input, h, w, &[], true).unwrap();
        let tape = tape.unwrap();
        let layer = net.layers[0];
        for c in 0..3 {
            let wts = &params[layer.weight + c * 18..layer.weight + (c + 1) * 18];
            let direct = naive_conv(&input, 2, h, w, 2, wts, params[layer.bias + c]);
            for (a, b) in tape.act_in[0][c * h * w..(c + 1) * h * w].iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn receptive_field_and_descriptor() {
        let net = small(0);
        assert_eq!(net.spec().receptive_field(), 9);
        assert!(net.spec().descriptor().contains("dil=[1,2,1]"));
    }

    fn check_gradients(cond_dim: usize) {
        let net = small(cond_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut params = net.init_params(&mut rng);
        // make the head non-trivial so every path carries gradient
        for v in params.iter_mut() {
            *v += 0.05 * rng.gen_range(-1.0..1.0);
        }
        let (h, w) = (5, 6);
        let input: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cond: Vec<f64> = (0..cond_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..2 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |params: &[f64], input: &[f64]| {
            let (out, _) = net.forward(params, input, h, w, &cond, false).unwrap();
            out.iter().zip(&target).map(|(o, t)| (o - t).powi(2)).sum::<f64>()
        };
        let (out, tape) = net.forward(&params, &input, h, w, &cond, true).unwrap();
        let d_out: Vec<f64> = out.iter().zip(&target).map(|(o, t)| 2.0 * (o - t)).collect();
        let mut grad = vec![0.0; params.len()];
        let d_in = net.backward(&params, &tape.unwrap(), &d_out, &mut grad).unwrap();
        let eps = 1e-5;
        for i in 0..params.len() {
            let mut pp = params.clone();
            pp[i] += eps;
            let up = loss(&pp, &input);
            pp[i] -= 2.0 * eps;
            let down = loss(&pp, &input);
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / denom < 1e-5, "param {i}: fd={fd} bp={}", grad[i]);
        }
        for i in (0..input.len()).step_by(7) {
            let mut x = input.clone();
            x[i] += eps;
            let up = loss(&params, &x);
            x[i] -= 2.0 * eps;
            let down = loss(&params, &x);
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(d_in[i].abs()).max(1e-6);
            assert!((fd - d_in[i]).abs() / denom < 1e-5, "input {i}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(0);
    }

    #[test]
    fn gradients_match_finite_differences_with_modulation() {
        check_gradients(3);
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = small(0);
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(net.forward(&params, &[0.0; 10], 2, 2, &[], false).is_err());
        assert!(net.forward(&params[1..], &[0.0; 12], 2, 2, &[], false).is_err());
        assert!(net.forward(&params, &[0.0; 12], 2, 2, &[1.0], false).is_err());
    }
}
