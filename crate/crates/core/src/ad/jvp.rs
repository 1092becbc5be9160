use crate::error::{Error, Result};
use crate::ir::{AbstractValue, Graph, GraphBuilder, Primitive, Var};

use super::linear_vars;

/// Forward-mode derivative with a tangent input for every input of `g`. The
/// result takes `(primals, tangents)` and returns `(outputs, output
/// tangents)`.
pub fn jvp(g: &Graph) -> Result<Graph> {
    jvp_with_mask(g, &vec![true; g.inputs().len()])
}

/// Like [`jvp`], but only inputs with `mask[i]` set receive a tangent input;
/// the others are treated as constants.
pub fn jvp_with_mask(g: &Graph, mask: &[bool]) -> Result<Graph> {
    if mask.len() != g.inputs().len() {
        return Err(Error::Differentiation(format!(
            "mask has {} entries for {} inputs",
            mask.len(),
            g.inputs().len()
        )));
    }
    let mut b = GraphBuilder::new(g.clients());
    let mut primal: Vec<Option<Var>> = vec![None; g.vars().len()];
    let mut tangent: Vec<Option<Var>> = vec![None; g.vars().len()];
    for &v in g.inputs() {
        primal[v.index()] = Some(b.input(g.value(v).clone()));
    }
    for (&v, _) in g.inputs().iter().zip(mask).filter(|(_, &m)| m) {
        tangent[v.index()] = Some(b.input(g.value(v).clone()));
    }
    let mut cx = Jvp { b: &mut b };
    for eq in g.equations() {
        let ins: Vec<Var> = eq.inputs.iter().map(|v| primal[v.index()].unwrap()).collect();
        let tins: Vec<Option<Var>> = eq.inputs.iter().map(|v| tangent[v.index()]).collect();
        let (outs, touts) = cx.rule(&eq.primitive, &ins, &tins)?;
        for ((&o, p), t) in eq.outputs.iter().zip(outs).zip(touts) {
            primal[o.index()] = Some(p);
            tangent[o.index()] = t;
        }
    }
    let mut outputs: Vec<Var> = g.outputs().iter().map(|v| primal[v.index()].unwrap()).collect();
    for &o in g.outputs() {
        let t = match tangent[o.index()] {
            Some(t) => t,
            None => b.zeros_like(g.value(o))?,
        };
        outputs.push(t);
    }
    let out = b.finish(outputs);
    out.validate()?;
    Ok(out)
}

struct Jvp<'a> {
    b: &'a mut GraphBuilder,
}

type RuleOut = (Vec<Var>, Vec<Option<Var>>);

impl Jvp<'_> {
    fn ty(&self, v: Var) -> AbstractValue {
        self.b.value(v).clone()
    }

    /// Make a tangent of a scalar operand match the shape of the result.
    fn fit(&mut self, t: Var, out: Var) -> Result<Var> {
        let out_ty = self.ty(out);
        if self.ty(t).shape == out_ty.shape {
            return Ok(t);
        }
        let z = self.b.zeros_like(&out_ty)?;
        self.b.add(z, t)
    }

    fn sum(&mut self, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
        Ok(match (a, b) {
            (Some(x), Some(y)) => Some(self.b.add(x, y)?),
            (x, None) => x,
            (None, y) => y,
        })
    }

    fn single(&mut self, prim: &Primitive, ins: &[Var]) -> Result<Var> {
        self.b.push1(prim.clone(), ins)
    }

    fn rule(&mut self, prim: &Primitive, ins: &[Var], t: &[Option<Var>]) -> Result<RuleOut> {
        if let Primitive::MapClients { body } = prim {
            return self.map_rule(body, ins, t);
        }
        let out = self.single(prim, ins)?;
        if t.iter().all(Option::is_none) {
            return Ok((vec![out], vec![None]));
        }
        let tout = match prim {
            Primitive::Constant { .. } => None,
            Primitive::Add => {
                let ta = t[0].map(|x| self.fit(x, out)).transpose()?;
                let tb = t[1].map(|x| self.fit(x, out)).transpose()?;
                self.sum(ta, tb)?
            }
            Primitive::Sub => {
                let ta = t[0].map(|x| self.fit(x, out)).transpose()?;
                let tb = match t[1] {
                    Some(x) => {
                        let n = self.b.neg(x)?;
                        Some(self.fit(n, out)?)
                    }
                    None => None,
                };
                self.sum(ta, tb)?
            }
            Primitive::Mul => {
                let ta = t[0].map(|x| self.b.mul(x, ins[1])).transpose()?;
                let tb = t[1].map(|x| self.b.mul(ins[0], x)).transpose()?;
                let ta = ta.map(|x| self.fit(x, out)).transpose()?;
                let tb = tb.map(|x| self.fit(x, out)).transpose()?;
                self.sum(ta, tb)?
            }
            Primitive::Div => {
                let ta = t[0].map(|x| self.b.div(x, ins[1])).transpose()?;
                let ta = ta.map(|x| self.fit(x, out)).transpose()?;
                let tb = match t[1] {
                    Some(x) => {
                        let q = self.b.div(x, ins[1])?;
                        let m = self.b.mul(out, q)?;
                        let n = self.b.neg(m)?;
                        Some(self.fit(n, out)?)
                    }
                    None => None,
                };
                self.sum(ta, tb)?
            }
            Primitive::Neg => Some(self.b.neg(t[0].unwrap())?),
            Primitive::Scale { factor } => Some(self.b.scale(*factor, t[0].unwrap())?),
            Primitive::IntegerPow { exponent } => match exponent {
                0 => None,
                1 => t[0],
                k => {
                    let p = self.b.integer_pow(k - 1, ins[0])?;
                    let d = self.b.scale(f64::from(*k), p)?;
                    Some(self.b.mul(d, t[0].unwrap())?)
                }
            },
            Primitive::BatchedDot | Primitive::BatchedOuter => {
                let ta = t[0].map(|x| self.single(prim, &[x, ins[1]])).transpose()?;
                let tb = t[1].map(|x| self.single(prim, &[ins[0], x])).transpose()?;
                self.sum(ta, tb)?
            }
            Primitive::ReduceLeading { .. }
            | Primitive::TileLeading { .. }
            | Primitive::BroadcastClients
            | Primitive::SumFromClients
            | Primitive::MeanFromClients => Some(self.single(prim, &[t[0].unwrap()])?),
            Primitive::MapClients { .. } => unreachable!(),
        };
        Ok((vec![out], vec![tout]))
    }

    /// Differentiate the body, then split it into a primal map producing the
    /// outputs plus residuals and a linear map consuming residuals and
    /// tangents.
    fn map_rule(&mut self, body: &Graph, ins: &[Var], t: &[Option<Var>]) -> Result<RuleOut> {
        let mask: Vec<bool> = t.iter().map(Option::is_some).collect();
        if !mask.iter().any(|&m| m) {
            let outs = self.b.map_clients(body.clone(), ins)?;
            let none = vec![None; outs.len()];
            return Ok((outs, none));
        }
        let jb = jvp_with_mask(body, &mask)?;
        let split = split_linear(&jb, body.inputs().len(), body.outputs().len())?;
        let outs = self.b.map_clients(split.primal, ins)?;
        let n_out = body.outputs().len();
        let mut lin_args: Vec<Var> = split
            .residuals
            .iter()
            .map(|r| match *r {
                Residual::Input(i) => ins[i],
                Residual::Output(j) => outs[n_out + j],
            })
            .collect();
        lin_args.extend(t.iter().flatten().copied());
        let touts = self.b.map_clients(split.linear, &lin_args)?;
        Ok((outs[..n_out].to_vec(), touts.into_iter().map(Some).collect()))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Residual {
    /// The primal body input at this position.
    Input(usize),
    /// Extra output `j` of the primal body.
    Output(usize),
}

pub(crate) struct Split {
    pub primal: Graph,
    pub linear: Graph,
    pub residuals: Vec<Residual>,
}

/// Partially evaluate a jvp graph with `n_in` primal inputs and `n_out`
/// primal outputs into its non-linear and linear halves. Constants used by
/// the linear half are copied into it instead of becoming residuals.
pub(crate) fn split_linear(j: &Graph, n_in: usize, n_out: usize) -> Result<Split> {
    let mask: Vec<bool> = (0..j.inputs().len()).map(|i| i >= n_in).collect();
    let linear = linear_vars(j, &mask);
    let mut def: Vec<Option<usize>> = vec![None; j.vars().len()];
    for (i, eq) in j.equations().iter().enumerate() {
        for &o in &eq.outputs {
            def[o.index()] = Some(i);
        }
    }
    let input_pos = |v: Var| j.inputs().iter().position(|&x| x == v);
    let is_constant = |v: Var| {
        def[v.index()]
            .map(|i| matches!(j.equations()[i].primitive, Primitive::Constant { .. }))
            .unwrap_or(false)
    };

    let mut pb = GraphBuilder::new(None);
    let mut pmap: Vec<Option<Var>> = vec![None; j.vars().len()];
    for &v in &j.inputs()[..n_in] {
        pmap[v.index()] = Some(pb.input(j.value(v).clone()));
    }
    for eq in j.equations() {
        if eq.outputs.iter().any(|o| linear[o.index()]) {
            continue;
        }
        let ins: Vec<Var> = eq.inputs.iter().map(|v| pmap[v.index()].unwrap()).collect();
        for (&o, n) in eq.outputs.iter().zip(pb.push(eq.primitive.clone(), &ins)?) {
            pmap[o.index()] = Some(n);
        }
    }

    // Non-linear values the linear half needs.
    let mut needed: Vec<Var> = Vec::new();
    let mut need = |v: Var| {
        if !linear[v.index()] && !is_constant(v) && !needed.contains(&v) {
            needed.push(v);
        }
    };
    for eq in j.equations() {
        if eq.outputs.iter().any(|o| linear[o.index()]) {
            eq.inputs.iter().for_each(|&v| need(v));
        }
    }
    j.outputs()[n_out..].iter().for_each(|&v| need(v));

    let mut residuals = Vec::new();
    let mut primal_outs: Vec<Var> = j.outputs()[..n_out]
        .iter()
        .map(|v| pmap[v.index()].unwrap())
        .collect();
    for &v in &needed {
        match input_pos(v) {
            Some(i) => residuals.push(Residual::Input(i)),
            None => {
                residuals.push(Residual::Output(primal_outs.len() - n_out));
                primal_outs.push(pmap[v.index()].unwrap());
            }
        }
    }

    let mut lb = GraphBuilder::new(None);
    let mut lmap: Vec<Option<Var>> = vec![None; j.vars().len()];
    for &v in &needed {
        lmap[v.index()] = Some(lb.input(j.value(v).clone()));
    }
    for &v in &j.inputs()[n_in..] {
        lmap[v.index()] = Some(lb.input(j.value(v).clone()));
    }
    let get = |v: Var, lb: &mut GraphBuilder, lmap: &mut Vec<Option<Var>>| -> Result<Var> {
        if let Some(x) = lmap[v.index()] {
            return Ok(x);
        }
        let eq = &j.equations()[def[v.index()].expect("constant has a definition")];
        let x = lb.push1(eq.primitive.clone(), &[])?;
        lmap[v.index()] = Some(x);
        Ok(x)
    };
    for eq in j.equations() {
        if !eq.outputs.iter().any(|o| linear[o.index()]) {
            continue;
        }
        let ins = eq
            .inputs
            .iter()
            .map(|&v| get(v, &mut lb, &mut lmap))
            .collect::<Result<Vec<_>>>()?;
        for (&o, n) in eq.outputs.iter().zip(lb.push(eq.primitive.clone(), &ins)?) {
            lmap[o.index()] = Some(n);
        }
    }
    let lin_outs = j.outputs()[n_out..]
        .iter()
        .map(|&v| get(v, &mut lb, &mut lmap))
        .collect::<Result<Vec<_>>>()?;
    Ok(Split {
        primal: pb.finish(primal_outs),
        linear: lb.finish(lin_outs),
        residuals,
    })
}
