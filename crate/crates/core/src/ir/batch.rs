//! Inlining of per-client bodies as ops batched over the leading axis.

use crate::error::{Error, Result};
use crate::placement::Placement;
use crate::tensor::{tile_axis, Tensor};

use super::{eval_equation, Graph, GraphBuilder, Primitive, Var};

#[derive(Clone)]
enum Bound {
    /// Value carrying the batch axis in front of the body shape.
    Batched(Var),
    /// Value that does not depend on the mapped arguments.
    Folded(Tensor),
}

struct Batcher<'a> {
    builder: &'a mut GraphBuilder,
    extent: usize,
    placement: Option<Placement>,
}

impl Batcher<'_> {
    /// Batched constant: `t` repeated along a new leading axis.
    fn repeat(&mut self, t: &Tensor) -> Result<Var> {
        let tiled = tile_axis(t, self.extent, 0, true)?;
        self.builder.placed_constant(tiled, self.placement)
    }

    fn batched(&mut self, b: &Bound) -> Result<Var> {
        match b {
            Bound::Batched(v) => Ok(*v),
            Bound::Folded(t) => self.repeat(t),
        }
    }

    /// Operand of an element-wise op: folded scalars stay unbatched.
    fn operand(&mut self, b: &Bound) -> Result<Var> {
        match b {
            Bound::Folded(t) if t.rank() == 0 => self.builder.constant(t.clone()),
            other => self.batched(other),
        }
    }

    /// Expand a batched per-client scalar of shape (k) to (k, ..shape).
    fn expand(&mut self, mut v: Var, shape: &[usize]) -> Result<Var> {
        for (i, &d) in shape.iter().enumerate() {
            v = self.builder.tile(v, d, i + 1, true)?;
        }
        Ok(v)
    }

    fn elementwise(&mut self, prim: &Primitive, a: &Bound, b: &Bound, body: &Graph, ins: &[Var]) -> Result<Var> {
        let sa = &body.value(ins[0]).shape;
        let sb = &body.value(ins[1]).shape;
        let batched_scalar = |x: &Bound, s: &[usize]| matches!(x, Bound::Batched(_)) && s.is_empty();
        if sa != sb && batched_scalar(a, sa) {
            let av = self.batched(a)?;
            let bv = self.batched(b)?;
            if *prim == Primitive::Mul && sb.len() == 1 {
                return self.builder.batched_outer(av, bv);
            }
            let av = self.expand(av, sb)?;
            return self.builder.push1(prim.clone(), &[av, bv]);
        }
        if sa != sb && batched_scalar(b, sb) {
            let av = self.batched(a)?;
            let bv = self.batched(b)?;
            if *prim == Primitive::Mul && sa.len() == 1 {
                return self.builder.batched_outer(bv, av);
            }
            let bv = self.expand(bv, sa)?;
            return self.builder.push1(prim.clone(), &[av, bv]);
        }
        let av = self.operand(a)?;
        let bv = self.operand(b)?;
        self.builder.push1(prim.clone(), &[av, bv])
    }
}

/// Emit `body` into `builder` as ops over the leading axis of `args`. The
/// mapped arguments share one leading extent; their placement (if any) is
/// carried by every emitted value.
pub fn inline_map(builder: &mut GraphBuilder, body: &Graph, args: &[Var]) -> Result<Vec<Var>> {
    let first = args
        .first()
        .map(|&a| builder.value(a).clone())
        .ok_or_else(|| Error::Unbatchable("map with no arguments".into()))?;
    if first.rank() == 0 {
        return Err(Error::Unbatchable("mapped argument has no leading axis".into()));
    }
    if body.inputs.len() != args.len() {
        return Err(Error::Unbatchable(format!(
            "body takes {} arguments, {} given",
            body.inputs.len(),
            args.len()
        )));
    }
    for (&bv, &a) in body.inputs.iter().zip(args) {
        let av = builder.value(a);
        if av.placement != first.placement || av.shape.first() != first.shape.first() || av.payload() != *body.value(bv) {
            return Err(Error::Unbatchable(format!(
                "argument {av} does not batch body input {}",
                body.value(bv)
            )));
        }
    }
    let mut b = Batcher {
        builder,
        extent: first.shape[0],
        placement: first.placement,
    };
    let mut env: Vec<Option<Bound>> = vec![None; body.vars.len()];
    for (&bv, &a) in body.inputs.iter().zip(args) {
        env[bv.index()] = Some(Bound::Batched(a));
    }
    for eq in &body.equations {
        let ins: Vec<Bound> = eq
            .inputs
            .iter()
            .map(|v| env[v.index()].clone().expect("validated body"))
            .collect();
        let folded: Option<Vec<Tensor>> = ins
            .iter()
            .map(|x| match x {
                Bound::Folded(t) => Some(t.clone()),
                Bound::Batched(_) => None,
            })
            .collect();
        if let Some(values) = folded {
            let outs = eval_equation(&eq.primitive, &values, None)?;
            for (&o, t) in eq.outputs.iter().zip(outs) {
                env[o.index()] = Some(Bound::Folded(t));
            }
            continue;
        }
        let out = match &eq.primitive {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => {
                b.elementwise(&eq.primitive, &ins[0], &ins[1], body, &eq.inputs)?
            }
            Primitive::Neg | Primitive::IntegerPow { .. } | Primitive::Scale { .. } => {
                let a = b.batched(&ins[0])?;
                b.builder.push1(eq.primitive.clone(), &[a])?
            }
            Primitive::BatchedDot | Primitive::BatchedOuter => {
                let x = b.batched(&ins[0])?;
                let y = b.batched(&ins[1])?;
                b.builder.push1(eq.primitive.clone(), &[x, y])?
            }
            Primitive::ReduceLeading { op, axis, keepdims } => {
                let a = b.batched(&ins[0])?;
                b.builder.reduce(*op, a, axis + 1, *keepdims)?
            }
            Primitive::TileLeading { count, axis, insert } => {
                let a = b.batched(&ins[0])?;
                b.builder.tile(a, *count, axis + 1, *insert)?
            }
            other => {
                return Err(Error::Unbatchable(format!(
                    "{} cannot appear in a per-client body",
                    other.id()
                )))
            }
        };
        env[eq.outputs[0].index()] = Some(Bound::Batched(out));
    }
    body.outputs
        .iter()
        .map(|o| {
            let bound = env[o.index()].clone().expect("validated body");
            b.batched(&bound)
        })
        .collect()
}
