use crate::error::{Error, Result};
use crate::ir::{AbstractValue, Graph, GraphBuilder, Primitive, Var};
use crate::tensor::{ReduceOp, Tensor};

use super::linear_vars;

/// Where output cotangents come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seed {
    /// Every linear output gets a cotangent of ones (a constant).
    Ones,
    /// Every output gets a cotangent input, appended after the non-linear
    /// inputs. Cotangents of outputs that do not depend on a linear input
    /// are ignored.
    Inputs,
}

/// Transpose `g` with respect to the inputs flagged in `linear_inputs`.
///
/// Equations that do not depend on a linear input are copied forward
/// unchanged (their results stay available, used or not). Equations that do
/// are transposed in reverse order. The result takes the non-linear inputs
/// (then one cotangent per output under [`Seed::Inputs`]) and returns
/// one cotangent per linear input.
pub fn transpose(g: &Graph, linear_inputs: &[bool], seed: Seed) -> Result<Graph> {
    if linear_inputs.len() != g.inputs().len() {
        return Err(Error::Differentiation(format!(
            "linear mask has {} entries for {} inputs",
            linear_inputs.len(),
            g.inputs().len()
        )));
    }
    let linear = linear_vars(g, linear_inputs);
    let mut b = GraphBuilder::new(g.clients());
    let mut map: Vec<Option<Var>> = vec![None; g.vars().len()];
    for (&v, _) in g.inputs().iter().zip(linear_inputs).filter(|(_, &l)| !l) {
        map[v.index()] = Some(b.input(g.value(v).clone()));
    }
    for eq in g.equations() {
        if eq.outputs.iter().any(|o| linear[o.index()]) {
            continue;
        }
        let ins: Vec<Var> = eq.inputs.iter().map(|v| map[v.index()].unwrap()).collect();
        for (&o, n) in eq.outputs.iter().zip(b.push(eq.primitive.clone(), &ins)?) {
            map[o.index()] = Some(n);
        }
    }

    let mut t = Transposer {
        b,
        ct: vec![None; g.vars().len()],
    };
    for &o in g.outputs() {
        let av = g.value(o);
        let c = match seed {
            Seed::Ones if linear[o.index()] => t
                .b
                .placed_constant(Tensor::ones(&av.shape, av.dtype), av.placement)?,
            Seed::Ones => continue,
            Seed::Inputs => t.b.input(av.clone()),
        };
        if linear[o.index()] {
            t.accumulate(o, c)?;
        }
    }

    for eq in g.equations().iter().rev() {
        if !eq.outputs.iter().any(|o| linear[o.index()]) {
            continue;
        }
        let cts: Vec<Option<Var>> = eq.outputs.iter().map(|o| t.ct[o.index()]).collect();
        if cts.iter().all(Option::is_none) {
            continue;
        }
        let is_lin: Vec<bool> = eq.inputs.iter().map(|v| linear[v.index()]).collect();
        let ins: Vec<Option<Var>> = eq.inputs.iter().map(|v| map[v.index()]).collect();
        let in_types: Vec<AbstractValue> = eq.inputs.iter().map(|&v| g.value(v).clone()).collect();
        let contribs = t.rule(&eq.primitive, &ins, &in_types, &is_lin, &cts, g, &eq.outputs)?;
        for (&v, c) in eq.inputs.iter().zip(contribs) {
            if let Some(c) = c {
                t.accumulate(v, c)?;
            }
        }
    }

    let mut outs = Vec::new();
    for (&v, _) in g.inputs().iter().zip(linear_inputs).filter(|(_, &l)| l) {
        let c = match t.ct[v.index()] {
            Some(c) => c,
            None => t.b.zeros_like(g.value(v))?,
        };
        outs.push(c);
    }
    let out = t.b.finish(outs);
    out.validate()?;
    Ok(out)
}

struct Transposer {
    b: GraphBuilder,
    ct: Vec<Option<Var>>,
}

fn nonlinear(op: &str) -> Error {
    Error::Differentiation(format!("{op} is not linear in the differentiated operands"))
}

impl Transposer {
    fn accumulate(&mut self, v: Var, c: Var) -> Result<()> {
        let slot = &mut self.ct[v.index()];
        *slot = Some(match *slot {
            Some(prev) => self.b.add(prev, c)?,
            None => c,
        });
        Ok(())
    }

    /// Sum a cotangent down to the shape of a rank-0 operand it was broadcast
    /// from.
    fn unbroadcast(&mut self, c: Var, target: &AbstractValue) -> Result<Var> {
        let cv = self.b.value(c).clone();
        if cv.shape == target.shape {
            return Ok(c);
        }
        if target.rank() != 0 || cv.placement.is_some() {
            return Err(Error::Differentiation(format!(
                "cannot reduce cotangent {cv} to operand {target}"
            )));
        }
        let mut c = c;
        for _ in 0..cv.rank() {
            c = self.b.reduce(ReduceOp::Sum, c, 0, false)?;
        }
        Ok(c)
    }

    fn scalar(&mut self, value: f64, like: Var) -> Result<Var> {
        let dtype = self.b.value(like).dtype;
        self.b.scalar(value, dtype)
    }

    #[allow(clippy::too_many_arguments)]
    fn rule(
        &mut self,
        prim: &Primitive,
        ins: &[Option<Var>],
        types: &[AbstractValue],
        lin: &[bool],
        cts: &[Option<Var>],
        g: &Graph,
        outputs: &[Var],
    ) -> Result<Vec<Option<Var>>> {
        let op = prim.id().name();
        let mut out = vec![None; ins.len()];
        if let Primitive::MapClients { body } = prim {
            return self.map_rule(body, ins, lin, cts, g, outputs);
        }
        let ct = cts[0].expect("checked by caller");
        match prim {
            Primitive::Add => {
                for i in 0..2 {
                    if lin[i] {
                        out[i] = Some(self.unbroadcast(ct, &types[i])?);
                    }
                }
            }
            Primitive::Sub => {
                if lin[0] {
                    out[0] = Some(self.unbroadcast(ct, &types[0])?);
                }
                if lin[1] {
                    let n = self.b.neg(ct)?;
                    out[1] = Some(self.unbroadcast(n, &types[1])?);
                }
            }
            Primitive::Mul => match (lin[0], lin[1]) {
                (true, false) => {
                    let m = self.b.mul(ct, ins[1].unwrap())?;
                    out[0] = Some(self.unbroadcast(m, &types[0])?);
                }
                (false, true) => {
                    let m = self.b.mul(ct, ins[0].unwrap())?;
                    out[1] = Some(self.unbroadcast(m, &types[1])?);
                }
                _ => return Err(nonlinear(op)),
            },
            Primitive::Div => {
                if lin[1] {
                    return Err(nonlinear(op));
                }
                let q = self.b.div(ct, ins[1].unwrap())?;
                out[0] = Some(self.unbroadcast(q, &types[0])?);
            }
            Primitive::Neg => out[0] = Some(self.b.neg(ct)?),
            Primitive::Scale { factor } => out[0] = Some(self.b.scale(*factor, ct)?),
            Primitive::IntegerPow { exponent: 1 } => out[0] = Some(ct),
            Primitive::IntegerPow { .. } | Primitive::Constant { .. } => return Err(nonlinear(op)),
            Primitive::BatchedDot => match (lin[0], lin[1]) {
                (true, false) => out[0] = Some(self.b.batched_outer(ct, ins[1].unwrap())?),
                (false, true) => out[1] = Some(self.b.batched_outer(ct, ins[0].unwrap())?),
                _ => return Err(nonlinear(op)),
            },
            Primitive::BatchedOuter => match (lin[0], lin[1]) {
                (true, false) => out[0] = Some(self.b.batched_dot(ct, ins[1].unwrap())?),
                (false, true) => out[1] = Some(self.b.batched_outer(ins[0].unwrap(), ct)?),
                _ => return Err(nonlinear(op)),
            },
            Primitive::ReduceLeading { op: rop, axis, keepdims } => {
                let len = types[0].shape[*axis];
                let mut c = self.b.tile(ct, len, *axis, !*keepdims)?;
                if *rop == ReduceOp::Mean {
                    let n = self.scalar(len as f64, c)?;
                    c = self.b.div(c, n)?;
                }
                out[0] = Some(c);
            }
            Primitive::TileLeading { axis, insert, .. } => {
                out[0] = Some(self.b.reduce(ReduceOp::Sum, ct, *axis, !*insert)?);
            }
            Primitive::BroadcastClients => out[0] = Some(self.b.sum_from_clients(ct)?),
            Primitive::SumFromClients => out[0] = Some(self.b.broadcast_clients(ct)?),
            Primitive::MeanFromClients => {
                let n = self.b.clients().map(|c| c.get()).ok_or_else(|| {
                    Error::Differentiation("mean_from_clients without a client count".into())
                })?;
                let c = self.b.broadcast_clients(ct)?;
                let n = self.scalar(n as f64, c)?;
                out[0] = Some(self.b.div(c, n)?);
            }
            Primitive::MapClients { .. } => unreachable!(),
        }
        Ok(out)
    }

    /// Transpose the linear body and map it over residuals and output
    /// cotangents.
    fn map_rule(
        &mut self,
        body: &Graph,
        ins: &[Option<Var>],
        lin: &[bool],
        cts: &[Option<Var>],
        g: &Graph,
        outputs: &[Var],
    ) -> Result<Vec<Option<Var>>> {
        let body_t = transpose(body, lin, Seed::Inputs)?;
        let mut args: Vec<Var> = ins
            .iter()
            .zip(lin)
            .filter(|(_, &l)| !l)
            .map(|(v, _)| v.expect("non-linear operand is available"))
            .collect();
        for (&o, c) in outputs.iter().zip(cts) {
            let c = match c {
                Some(c) => *c,
                None => self.b.zeros_like(g.value(o))?,
            };
            args.push(c);
        }
        let res = self.b.map_clients(body_t, &args)?;
        let mut res = res.into_iter();
        Ok(lin
            .iter()
            .map(|&l| if l { res.next() } else { None })
            .collect())
    }
}
