//! Sequence backbones mapping a [d_in, k] history window to a single output
//! vector: a causal dilated TCN and an unrolled LSTM. Both build their
//! computation on the shared autodiff tape.

use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{NodeId, ParamId, ParamLeases, ParamSet, Tape};
use crate::tensor::Tensor;

/// TCN hyperparameters (input/output widths come from the model variant).
#[derive(Debug, Clone, PartialEq)]
pub struct TcnHyper {
    pub hidden: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub residual: bool,
}

impl Default for TcnHyper {
    fn default() -> Self {
        TcnHyper { hidden: 32, kernel: 2, dilations: vec![1, 2, 4, 8], residual: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmHyper {
    pub hidden: usize,
    pub layers: usize,
}

impl Default for LstmHyper {
    fn default() -> Self {
        LstmHyper { hidden: 64, layers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackboneHyper {
    Tcn(TcnHyper),
    Lstm(LstmHyper),
}

impl BackboneHyper {
    pub fn kind_label(&self) -> &'static str {
        match self {
            BackboneHyper::Tcn(_) => "tcn",
            BackboneHyper::Lstm(_) => "lstm",
        }
    }
}

/// Frames of history a causal stack with the given kernel and dilation
/// schedule can see from its last output column.
pub fn tcn_receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + (kernel - 1) * dilations.iter().sum::<usize>()
}

/// One LSTM cell update with gate order (input, forget, cell, output).
///
/// `w_ih` is [4h, d], `w_hh` is [4h, h], `bias` is [4h]; returns the new
/// hidden and cell state nodes.
pub fn lstm_cell_step(
    tape: &mut Tape,
    w_ih: NodeId,
    w_hh: NodeId,
    bias: NodeId,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let four_h = tape.value(w_hh).shape()[0];
    let h_dim = tape.value(w_hh).shape()[1];
    if four_h != 4 * h_dim {
        return Err(Error::shape(
            "lstm_cell_step",
            format!("recurrent weight {:?} is not [4h, h]", tape.value(w_hh).shape()),
        ));
    }
    let from_input = tape.linear(w_ih, x, bias)?;
    let from_hidden = tape.matvec(w_hh, h_prev)?;
    let gates = tape.add(from_input, from_hidden)?;
    let i_raw = tape.rows(gates, 0, h_dim)?;
    let f_raw = tape.rows(gates, h_dim, h_dim)?;
    let g_raw = tape.rows(gates, 2 * h_dim, h_dim)?;
    let o_raw = tape.rows(gates, 3 * h_dim, h_dim)?;
    let i = tape.sigmoid(i_raw);
    let f = tape.sigmoid(f_raw);
    let g = tape.tanh(g_raw);
    let o = tape.sigmoid(o_raw);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}

#[derive(Debug, Clone)]
struct TcnBlock {
    kernel: ParamId,
    bias: ParamId,
    /// 1x1 projection for the residual path when channel counts differ.
    skip: Option<ParamId>,
    dilation: usize,
}

#[derive(Debug, Clone)]
pub struct Tcn {
    pub input_dim: usize,
    pub output_dim: usize,
    /// History window length the net was built for.
    pub k: usize,
    pub hyper: TcnHyper,
    blocks: Vec<TcnBlock>,
    head_w: ParamId,
    head_b: ParamId,
    own: Vec<ParamId>,
}

impl Tcn {
    pub fn build(
        input_dim: usize,
        output_dim: usize,
        k: usize,
        hyper: TcnHyper,
        params: &mut ParamSet,
        prefix: &str,
        seed: u64,
    ) -> Result<Tcn> {
        if input_dim == 0 || output_dim == 0 || hyper.hidden == 0 {
            return Err(Error::Config("tcn dimensions must be positive".into()));
        }
        if hyper.kernel == 0 || hyper.dilations.is_empty() || hyper.dilations.contains(&0) {
            return Err(Error::Config("tcn kernel and dilations must be >= 1".into()));
        }
        let rf = tcn_receptive_field(hyper.kernel, &hyper.dilations);
        if k < rf {
            return Err(Error::Config(format!(
                "history window k={k} is shorter than the receptive field {rf}"
            )));
        }
        let mut rng = rng::chacha(seed);
        let mut own = Vec::new();
        let mut blocks = Vec::new();
        let mut c_in = input_dim;
        for (b, &dil) in hyper.dilations.iter().enumerate() {
            let kernel = params.add_uniform(
                format!("{prefix}.block{b}.kernel"),
                &[hyper.hidden, c_in, hyper.kernel],
                c_in * hyper.kernel,
                &mut rng,
            );
            let bias =
                params.add(format!("{prefix}.block{b}.bias"), Tensor::zeros(&[hyper.hidden]));
            let skip = if hyper.residual && c_in != hyper.hidden {
                Some(params.add_uniform(
                    format!("{prefix}.block{b}.skip"),
                    &[hyper.hidden, c_in, 1],
                    c_in,
                    &mut rng,
                ))
            } else {
                None
            };
            own.push(kernel);
            own.push(bias);
            if let Some(s) = skip {
                own.push(s);
            }
            blocks.push(TcnBlock { kernel, bias, skip, dilation: dil });
            c_in = hyper.hidden;
        }
        let head_w = params.add_uniform(
            format!("{prefix}.head.weight"),
            &[output_dim, hyper.hidden],
            hyper.hidden,
            &mut rng,
        );
        let head_b = params.add(format!("{prefix}.head.bias"), Tensor::zeros(&[output_dim]));
        own.push(head_w);
        own.push(head_b);
        Ok(Tcn { input_dim, output_dim, k, hyper, blocks, head_w, head_b, own })
    }

    fn check_input(&self, tape: &Tape, input: NodeId) -> Result<()> {
        let shape = tape.value(input).shape();
        if shape != [self.input_dim, self.k] {
            return Err(Error::shape(
                "tcn_forward",
                format!("want [{}, {}], got {:?}", self.input_dim, self.k, shape),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, leases: &ParamLeases, input: NodeId) -> Result<NodeId> {
        Ok(self.forward_acts(tape, leases, input)?.0)
    }

    /// Forward pass that also returns each block's [hidden, k] output.
    pub fn forward_acts(
        &self,
        tape: &mut Tape,
        leases: &ParamLeases,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        self.check_input(tape, input)?;
        let mut x = input;
        let mut acts = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let conv = tape.conv1d(x, leases.node(block.kernel), block.dilation)?;
            let mut pre = tape.bias_channels(conv, leases.node(block.bias))?;
            if self.hyper.residual {
                let skip = match block.skip {
                    Some(s) => tape.conv1d(x, leases.node(s), 1)?,
                    None => x,
                };
                pre = tape.add(pre, skip)?;
            }
            x = tape.relu(pre);
            acts.push(x);
        }
        let last = tape.column(x, self.k - 1)?;
        let out = tape.linear(leases.node(self.head_w), last, leases.node(self.head_b))?;
        Ok((out, acts))
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.own
    }

    pub fn receptive_field(&self) -> usize {
        tcn_receptive_field(self.hyper.kernel, &self.hyper.dilations)
    }

    pub fn analytic_param_count(input_dim: usize, output_dim: usize, hyper: &TcnHyper) -> usize {
        let mut total = 0;
        let mut c_in = input_dim;
        for _ in &hyper.dilations {
            total += hyper.hidden * c_in * hyper.kernel + hyper.hidden;
            if hyper.residual && c_in != hyper.hidden {
                total += hyper.hidden * c_in;
            }
            c_in = hyper.hidden;
        }
        total + output_dim * hyper.hidden + output_dim
    }
}

#[derive(Debug, Clone)]
struct LstmLayer {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_dim: usize,
    pub output_dim: usize,
    pub k: usize,
    pub hyper: LstmHyper,
    layers: Vec<LstmLayer>,
    head_w: ParamId,
    head_b: ParamId,
    own: Vec<ParamId>,
}

impl Lstm {
    pub fn build(
        input_dim: usize,
        output_dim: usize,
        k: usize,
        hyper: LstmHyper,
        params: &mut ParamSet,
        prefix: &str,
        seed: u64,
    ) -> Result<Lstm> {
        if input_dim == 0 || output_dim == 0 || hyper.hidden == 0 || hyper.layers == 0 {
            return Err(Error::Config("lstm dimensions must be positive".into()));
        }
        if k == 0 {
            return Err(Error::Config("history window k must be >= 1".into()));
        }
        let mut rng = rng::chacha(seed);
        let mut own = Vec::new();
        let mut layers = Vec::new();
        let h = hyper.hidden;
        let mut d = input_dim;
        for l in 0..hyper.layers {
            let w_ih = params.add_uniform(format!("{prefix}.layer{l}.w_ih"), &[4 * h, d], d, &mut rng);
            let w_hh = params.add_uniform(format!("{prefix}.layer{l}.w_hh"), &[4 * h, h], h, &mut rng);
            let bias = params.add(format!("{prefix}.layer{l}.bias"), Tensor::zeros(&[4 * h]));
            own.extend([w_ih, w_hh, bias]);
            layers.push(LstmLayer { w_ih, w_hh, bias });
            d = h;
        }
        let head_w =
            params.add_uniform(format!("{prefix}.head.weight"), &[output_dim, h], h, &mut rng);
        let head_b = params.add(format!("{prefix}.head.bias"), Tensor::zeros(&[output_dim]));
        own.push(head_w);
        own.push(head_b);
        Ok(Lstm { input_dim, output_dim, k, hyper, layers, head_w, head_b, own })
    }

    fn check_input(&self, tape: &Tape, input: NodeId) -> Result<()> {
        let shape = tape.value(input).shape();
        if shape != [self.input_dim, self.k] {
            return Err(Error::shape(
                "lstm_forward",
                format!("want [{}, {}], got {:?}", self.input_dim, self.k, shape),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, leases: &ParamLeases, input: NodeId) -> Result<NodeId> {
        Ok(self.forward_acts(tape, leases, input)?.0)
    }

    /// Forward pass that also returns, per layer, the [hidden, k] matrix of
    /// hidden states across the unroll.
    pub fn forward_acts(
        &self,
        tape: &mut Tape,
        leases: &ParamLeases,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        self.check_input(tape, input)?;
        let h_dim = self.hyper.hidden;
        let zero = Tensor::zeros(&[h_dim]);
        let mut h: Vec<NodeId> = (0..self.layers.len()).map(|_| tape.leaf(zero.clone())).collect();
        let mut c: Vec<NodeId> = (0..self.layers.len()).map(|_| tape.leaf(zero.clone())).collect();
        let mut per_layer_h: Vec<Vec<NodeId>> = vec![Vec::with_capacity(self.k); self.layers.len()];
        for t in 0..self.k {
            let mut x = tape.column(input, t)?;
            for (l, layer) in self.layers.iter().enumerate() {
                let (hn, cn) = lstm_cell_step(
                    tape,
                    leases.node(layer.w_ih),
                    leases.node(layer.w_hh),
                    leases.node(layer.bias),
                    x,
                    h[l],
                    c[l],
                )?;
                h[l] = hn;
                c[l] = cn;
                per_layer_h[l].push(hn);
                x = hn;
            }
        }
        let final_h = h[self.layers.len() - 1];
        let out = tape.linear(leases.node(self.head_w), final_h, leases.node(self.head_b))?;
        let mut acts = Vec::with_capacity(self.layers.len());
        for states in per_layer_h {
            acts.push(tape.stack_cols(&states)?);
        }
        Ok((out, acts))
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.own
    }

    pub fn analytic_param_count(input_dim: usize, output_dim: usize, hyper: &LstmHyper) -> usize {
        let h = hyper.hidden;
        let mut total = 0;
        let mut d = input_dim;
        for _ in 0..hyper.layers {
            total += 4 * h * d + 4 * h * h + 4 * h;
            d = h;
        }
        total + output_dim * h + output_dim
    }
}

/// Either backbone behind one interface.
#[derive(Debug, Clone)]
pub enum Backbone {
    Tcn(Tcn),
    Lstm(Lstm),
}

impl Backbone {
    pub fn build(
        input_dim: usize,
        output_dim: usize,
        k: usize,
        hyper: &BackboneHyper,
        params: &mut ParamSet,
        prefix: &str,
        seed: u64,
    ) -> Result<Backbone> {
        Ok(match hyper {
            BackboneHyper::Tcn(h) => {
                Backbone::Tcn(Tcn::build(input_dim, output_dim, k, h.clone(), params, prefix, seed)?)
            }
            BackboneHyper::Lstm(h) => Backbone::Lstm(Lstm::build(
                input_dim, output_dim, k, h.clone(), params, prefix, seed,
            )?),
        })
    }

    pub fn forward(&self, tape: &mut Tape, leases: &ParamLeases, input: NodeId) -> Result<NodeId> {
        match self {
            Backbone::Tcn(n) => n.forward(tape, leases, input),
            Backbone::Lstm(n) => n.forward(tape, leases, input),
        }
    }

    pub fn forward_acts(
        &self,
        tape: &mut Tape,
        leases: &ParamLeases,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        match self {
            Backbone::Tcn(n) => n.forward_acts(tape, leases, input),
            Backbone::Lstm(n) => n.forward_acts(tape, leases, input),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Backbone::Tcn(n) => n.input_dim,
            Backbone::Lstm(n) => n.input_dim,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Backbone::Tcn(n) => n.k,
            Backbone::Lstm(n) => n.k,
        }
    }

    pub fn param_ids(&self) -> &[ParamId] {
        match self {
            Backbone::Tcn(n) => n.param_ids(),
            Backbone::Lstm(n) => n.param_ids(),
        }
    }
}

/// Anything the causality probe can interrogate.
pub trait SequenceCore {
    fn probe_input_dim(&self) -> usize;
    fn probe_window(&self) -> usize;
    fn probe_forward(
        &self,
        tape: &mut Tape,
        leases: &ParamLeases,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)>;
}

impl SequenceCore for Backbone {
    fn probe_input_dim(&self) -> usize {
        self.input_dim()
    }

    fn probe_window(&self) -> usize {
        self.window()
    }

    fn probe_forward(
        &self,
        tape: &mut Tape,
        leases: &ParamLeases,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        self.forward_acts(tape, leases, input)
    }
}

/// Deliberately acausal reference: every output column is the centered
/// three-frame average of its input neighborhood. Exists so the causality
/// probe's own failure mode stays tested.
pub struct CenteredAverageProbe {
    pub dim: usize,
    pub k: usize,
}

impl SequenceCore for CenteredAverageProbe {
    fn probe_input_dim(&self) -> usize {
        self.dim
    }

    fn probe_window(&self) -> usize {
        self.k
    }

    fn probe_forward(
        &self,
        tape: &mut Tape,
        _leases: &ParamLeases,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let x = tape.value(input).clone();
        let (c_n, t_n) = (x.shape()[0], x.shape()[1]);
        let mut out = Tensor::zeros(&[c_n, t_n]);
        for c in 0..c_n {
            for t in 0..t_n {
                let lo = t.saturating_sub(1);
                let hi = (t + 1).min(t_n - 1);
                let mut acc = 0.0;
                for s in lo..=hi {
                    acc += x.at2(c, s);
                }
                out.set2(c, t, acc / (hi - lo + 1) as f64);
            }
        }
        let act = tape.leaf(out);
        let head = tape.column(act, t_n - 1)?;
        Ok((head, vec![act]))
    }
}

/// True iff perturbing history columns strictly after `t` leaves every
/// internal activation at columns 0..=t bit-identical. `noise_seed` drives
/// the perturbation.
pub fn causality_probe<S: SequenceCore + ?Sized>(
    net: &S,
    params: &ParamSet,
    history: &Tensor,
    t: usize,
    noise_seed: u64,
) -> Result<bool> {
    let k = net.probe_window();
    if history.shape() != [net.probe_input_dim(), k] {
        return Err(Error::shape(
            "causality_probe",
            format!("want [{}, {k}], got {:?}", net.probe_input_dim(), history.shape()),
        ));
    }
    if t + 1 >= k {
        return Ok(true); // nothing after t to perturb
    }
    let mut tape = Tape::new();
    let leases = tape.register_params(params);
    let base_in = tape.leaf(history.clone());
    let (_, base_acts) = net.probe_forward(&mut tape, &leases, base_in)?;
    let base: Vec<Tensor> = base_acts.iter().map(|&id| tape.value(id).clone()).collect();

    let mut rng = rng::chacha(noise_seed);
    let mut perturbed = history.clone();
    for c in 0..perturbed.rows() {
        for col in (t + 1)..k {
            let v = perturbed.at2(c, col);
            perturbed.set2(c, col, v + rng::uniform_range(&mut rng, 0.5, 1.5));
        }
    }
    let pert_in = tape.leaf(perturbed);
    let (_, pert_acts) = net.probe_forward(&mut tape, &leases, pert_in)?;

    for (b, &p_id) in base.iter().zip(&pert_acts) {
        let p = tape.value(p_id);
        if b.shape() != p.shape() {
            return Ok(false);
        }
        let cols = b.cols();
        for r in 0..b.rows() {
            for col in 0..=t.min(cols - 1) {
                if b.at2(r, col).to_bits() != p.at2(r, col).to_bits() {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(params: &mut ParamSet) {
        for p in params.iter_mut() {
            for v in p.value.data_mut() {
                *v = 0.0;
            }
        }
    }

    #[test]
    fn receptive_field_matches_hand_arithmetic() {
        assert_eq!(tcn_receptive_field(2, &[1, 2, 4, 8]), 16);
        assert_eq!(tcn_receptive_field(3, &[1, 2, 4, 8]), 31);
        assert_eq!(tcn_receptive_field(2, &[1]), 2);
    }

    #[test]
    fn tcn_build_rejects_window_shorter_than_receptive_field() {
        let mut params = ParamSet::new();
        let err = Tcn::build(4, 2, 8, TcnHyper::default(), &mut params, "t", 0).unwrap_err();
        assert!(err.to_string().contains("receptive field"), "{err}");
    }

    #[test]
    fn tcn_param_count_matches_analytic() {
        let mut params = ParamSet::new();
        let hyper = TcnHyper::default();
        let net = Tcn::build(23, 48, 32, hyper.clone(), &mut params, "m", 3).unwrap();
        let total: usize = net.param_ids().iter().map(|&id| params.get(id).value.len()).sum();
        assert_eq!(total, Tcn::analytic_param_count(23, 48, &hyper));
        assert_eq!(total, params.value_count());
    }

    #[test]
    fn lstm_param_count_matches_analytic() {
        let mut params = ParamSet::new();
        let hyper = LstmHyper { hidden: 64, layers: 2 };
        let net = Lstm::build(71, 48, 32, hyper.clone(), &mut params, "m", 3).unwrap();
        let total: usize = net.param_ids().iter().map(|&id| params.get(id).value.len()).sum();
        assert_eq!(total, Lstm::analytic_param_count(71, 48, &hyper));
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut params = ParamSet::new();
        let net = Tcn::build(3, 2, 16, TcnHyper { hidden: 4, ..Default::default() }, &mut params, "t", 1)
            .unwrap();
        zeroed(&mut params);
        let mut tape = Tape::new();
        let leases = tape.register_params(&params);
        let input = tape.leaf(Tensor::filled(&[3, 16], 0.7));
        let out = net.forward(&mut tape, &leases, input).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

        let mut params = ParamSet::new();
        let net = Lstm::build(3, 2, 8, LstmHyper { hidden: 4, layers: 1 }, &mut params, "l", 1)
            .unwrap();
        zeroed(&mut params);
        let mut tape = Tape::new();
        let leases = tape.register_params(&params);
        let input = tape.leaf(Tensor::filled(&[3, 8], 0.7));
        let out = net.forward(&mut tape, &leases, input).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_tap_tcn_echoes_last_column() {
        // one block, kernel taps (current, previous) = (identity, zero),
        // residual off, identity head: output must be the last input column
        let mut params = ParamSet::new();
        let hyper = TcnHyper { hidden: 3, kernel: 2, dilations: vec![1], residual: false };
        let net = Tcn::build(3, 3, 4, hyper, &mut params, "echo", 0).unwrap();
        zeroed(&mut params);
        for c in 0..3 {
            // kernel shape [3, 3, 2]
            params.get_mut(0).value.data_mut()[(c * 3 + c) * 2] = 1.0;
            // head weight [3, 3]
            params.get_mut(2).value.data_mut()[c * 3 + c] = 1.0;
        }
        let mut tape = Tape::new();
        let leases = tape.register_params(&params);
        let input = tape.leaf(
            Tensor::from_vec(&[3, 4], vec![
                0.1, 0.2, 0.3, 0.4, //
                0.5, 0.6, 0.7, 0.8, //
                0.9, 1.0, 1.1, 1.2,
            ])
            .unwrap(),
        );
        let out = net.forward(&mut tape, &leases, input).unwrap();
        assert_eq!(tape.value(out).data(), &[0.4, 0.8, 1.2]);
    }

    #[test]
    fn tcn_ignores_columns_older_than_receptive_field() {
        let mut params = ParamSet::new();
        let net = Tcn::build(5, 3, 32, TcnHyper::default(), &mut params, "t", 9).unwrap();
        assert_eq!(net.receptive_field(), 16);
        let mut tape = Tape::new();
        let leases = tape.register_params(&params);
        let mut data = Vec::new();
        let mut rng = rng::chacha(4);
        for _ in 0..5 * 32 {
            data.push(rng::normal(&mut rng));
        }
        let base = Tensor::from_vec(&[5, 32], data.clone()).unwrap();
        let b_in = tape.leaf(base);
        let b_out = net.forward(&mut tape, &leases, b_in).unwrap();
        let b_val = tape.value(b_out).clone();
        // scramble the 16 oldest columns
        for c in 0..5 {
            for t in 0..16 {
                data[c * 32 + t] = 1000.0 + (c * 32 + t) as f64;
            }
        }
        let p_in = tape.leaf(Tensor::from_vec(&[5, 32], data).unwrap());
        let p_out = net.forward(&mut tape, &leases, p_in).unwrap();
        for i in 0..3 {
            assert_eq!(b_val.at(i).to_bits(), tape.value(p_out).at(i).to_bits());
        }
    }

    #[test]
    fn lstm_cell_matches_scalar_hand_evaluation() {
        // single unit, hand-set weights; oracle computed with explicit scalar
        // gate arithmetic below
        let mut tape = Tape::new();
        let w_ih = tape.leaf(Tensor::from_vec(&[4, 1], vec![0.5, -0.3, 0.8, 0.2]).unwrap());
        let w_hh = tape.leaf(Tensor::from_vec(&[4, 1], vec![0.1, 0.4, -0.5, 0.9]).unwrap());
        let bias = tape.leaf(Tensor::from_vec(&[4], vec![0.05, -0.02, 0.3, -0.4]).unwrap());
        let x = tape.leaf(Tensor::from_vec(&[1], vec![0.7]).unwrap());
        let h0 = tape.leaf(Tensor::from_vec(&[1], vec![-0.2]).unwrap());
        let c0 = tape.leaf(Tensor::from_vec(&[1], vec![0.35]).unwrap());
        let (h, c) = lstm_cell_step(&mut tape, w_ih, w_hh, bias, x, h0, c0).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5 * 0.7 + 0.1 * -0.2 + 0.05);
        let f = sig(-0.3 * 0.7 + 0.4 * -0.2 - 0.02);
        let g = (0.8f64 * 0.7 + -0.5 * -0.2 + 0.3).tanh();
        let o = sig(0.2 * 0.7 + 0.9 * -0.2 - 0.4);
        let c_expect = f * 0.35 + i * g;
        let h_expect = o * c_expect.tanh();
        assert!((tape.value(c).at(0) - c_expect).abs() < 1e-12);
        assert!((tape.value(h).at(0) - h_expect).abs() < 1e-12);
    }

    #[test]
    fn saturated_forget_gate_carries_cell_state() {
        let h_dim = 3;
        let mut tape = Tape::new();
        let w_ih = tape.leaf(Tensor::zeros(&[4 * h_dim, 2]));
        let w_hh = tape.leaf(Tensor::zeros(&[4 * h_dim, h_dim]));
        let mut b = Tensor::zeros(&[4 * h_dim]);
        for i in h_dim..2 * h_dim {
            b.data_mut()[i] = 100.0; // forget gate pinned open
        }
        let bias = tape.leaf(b);
        let x = tape.leaf(Tensor::from_vec(&[2], vec![0.3, -0.4]).unwrap());
        let h0 = tape.leaf(Tensor::zeros(&[h_dim]));
        let c0 = tape.leaf(Tensor::from_vec(&[3], vec![0.5, -1.2, 2.0]).unwrap());
        let (_, c) = lstm_cell_step(&mut tape, w_ih, w_hh, bias, x, h0, c0).unwrap();
        // i*g = sigmoid(0)*tanh(0) = 0, f ~ 1 so c ~ c_prev
        for (got, want) in tape.value(c).data().iter().zip([0.5, -1.2, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn forward_rejects_wrong_window() {
        let mut params = ParamSet::new();
        let net = Backbone::build(
            4,
            2,
            16,
            &BackboneHyper::Tcn(TcnHyper { hidden: 4, ..Default::default() }),
            &mut params,
            "t",
            0,
        )
        .unwrap();
        let mut tape = Tape::new();
        let leases = tape.register_params(&params);
        let bad = tape.leaf(Tensor::zeros(&[4, 15]));
        assert!(net.forward(&mut tape, &leases, bad).is_err());
    }

    #[test]
    fn same_seed_builds_bit_identical_backbones() {
        for hyper in [
            BackboneHyper::Tcn(TcnHyper::default()),
            BackboneHyper::Lstm(LstmHyper::default()),
        ] {
            let mut p1 = ParamSet::new();
            let mut p2 = ParamSet::new();
            let n1 = Backbone::build(7, 4, 32, &hyper, &mut p1, "x", 42).unwrap();
            let _ = Backbone::build(7, 4, 32, &hyper, &mut p2, "x", 42).unwrap();
            for (a, b) in p1.iter().zip(p2.iter()) {
                assert_eq!(a.value.data(), b.value.data());
            }
            // and forward is deterministic
            let input = Tensor::filled(&[7, 32], 0.25);
            let mut tape = Tape::new();
            let leases = tape.register_params(&p1);
            let i1 = tape.leaf(input.clone());
            let o1 = n1.forward(&mut tape, &leases, i1).unwrap();
            let i2 = tape.leaf(input);
            let o2 = n1.forward(&mut tape, &leases, i2).unwrap();
            for i in 0..4 {
                assert_eq!(tape.value(o1).at(i).to_bits(), tape.value(o2).at(i).to_bits());
            }
        }
    }

    #[test]
    fn causality_probe_passes_real_backbones() {
        for k in [16usize, 32, 64] {
            let mut params = ParamSet::new();
            let tcn = Backbone::build(
                5,
                3,
                k,
                &BackboneHyper::Tcn(TcnHyper { hidden: 6, ..Default::default() }),
                &mut params,
                "t",
                7,
            )
            .unwrap();
            let mut data = Vec::new();
            let mut rng = rng::chacha(k as u64);
            for _ in 0..5 * k {
                data.push(rng::normal(&mut rng));
            }
            let h = Tensor::from_vec(&[5, k], data).unwrap();
            for t in [0, k / 2, k - 2] {
                assert!(causality_probe(&tcn, &params, &h, t, 99).unwrap(), "tcn k={k} t={t}");
            }

            let mut params = ParamSet::new();
            let lstm = Backbone::build(
                5,
                3,
                k,
                &BackboneHyper::Lstm(LstmHyper { hidden: 5, layers: 1 }),
                &mut params,
                "l",
                7,
            )
            .unwrap();
            for t in [0, k / 2, k - 2] {
                assert!(causality_probe(&lstm, &params, &h, t, 99).unwrap(), "lstm k={k} t={t}");
            }
        }
    }

    #[test]
    fn causality_probe_rejects_centered_filter() {
        let probe = CenteredAverageProbe { dim: 3, k: 16 };
        let params = ParamSet::new();
        let mut data = Vec::new();
        let mut rng = rng::chacha(5);
        for _ in 0..3 * 16 {
            data.push(rng::normal(&mut rng));
        }
        let h = Tensor::from_vec(&[3, 16], data).unwrap();
        assert!(!causality_probe(&probe, &params, &h, 7, 99).unwrap());
    }
}
