use std::fmt::Write;

use crate::error::{Error, Result};
use crate::ir::{AbstractValue, Equation, Graph, Primitive, PrimitiveId, Var};
use crate::placement::{ClientCount, Placement};
use crate::tensor::{DType, ReduceOp, Tensor};

const MAGIC: &str = "FEDGRAPH/1";

/// Canonical encoding. Byte-stable: floats are written as their IEEE bit
/// patterns and variable ids are kept as they are.
pub fn serialize_canonical(g: &Graph) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    write_graph(g, &mut out);
    out.into_bytes()
}

fn sized(s: &str) -> String {
    format!("{}:{s}", s.len())
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn placement_str(p: Option<Placement>) -> &'static str {
    p.map(|p| p.name()).unwrap_or("-")
}

fn ids(vs: &[Var]) -> String {
    let mut s = vs.len().to_string();
    for v in vs {
        let _ = write!(s, " {}", v.0);
    }
    s
}

fn dims(shape: &[usize]) -> String {
    let mut s = shape.len().to_string();
    for d in shape {
        let _ = write!(s, " {d}");
    }
    s
}

fn write_graph(g: &Graph, out: &mut String) {
    out.push_str("graph\n");
    match g.clients() {
        Some(n) => {
            let _ = writeln!(out, "clients {}", n.get());
        }
        None => out.push_str("clients -\n"),
    }
    let _ = writeln!(out, "vars {}", g.vars().len());
    for av in g.vars() {
        let _ = writeln!(out, "v {} {} {}", av.dtype, placement_str(av.placement), dims(&av.shape));
    }
    let _ = writeln!(out, "inputs {}", ids(g.inputs()));
    for eq in g.equations() {
        let _ = write!(out, "eq {}", sized(eq.primitive.id().name()));
        match &eq.primitive {
            Primitive::IntegerPow { exponent } => {
                let _ = write!(out, " exponent {exponent}");
            }
            Primitive::Scale { factor } => {
                let _ = write!(out, " factor {}", hex(*factor));
            }
            Primitive::ReduceLeading { op, axis, keepdims } => {
                let _ = write!(out, " op {} axis {axis} keepdims {}", sized(op.name()), u8::from(*keepdims));
            }
            Primitive::TileLeading { count, axis, insert } => {
                let _ = write!(out, " count {count} axis {axis} insert {}", u8::from(*insert));
            }
            Primitive::Constant { value, placement } => {
                let _ = write!(
                    out,
                    " placement {} dtype {} shape {} data {}",
                    placement_str(*placement),
                    value.dtype(),
                    dims(value.shape()),
                    value.len()
                );
                for &v in value.data() {
                    let _ = write!(out, " {}", hex(v));
                }
            }
            Primitive::MapClients { .. } => out.push_str(" body"),
            _ => {}
        }
        let _ = writeln!(out, " in {} out {}", ids(&eq.inputs), ids(&eq.outputs));
        if let Primitive::MapClients { body } = &eq.primitive {
            write_graph(body, out);
        }
    }
    let _ = writeln!(out, "outputs {}", ids(g.outputs()));
    out.push_str("end\n");
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            offset,
            reason: reason.into(),
        }
    }

    fn token(&mut self) -> Result<(usize, &'a str)> {
        let rest = &self.src[self.pos..];
        let skipped = rest.len() - rest.trim_start().len();
        let start = self.pos + skipped;
        let tail = &self.src[start..];
        if tail.is_empty() {
            return Err(self.err(start, "unexpected end of input"));
        }
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        self.pos = start + len;
        Ok((start, &tail[..len]))
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let (at, tok) = self.token()?;
        if tok != word {
            return Err(self.err(at, format!("expected `{word}`, found `{tok}`")));
        }
        Ok(())
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<T> {
        let (at, tok) = self.token()?;
        tok.parse()
            .map_err(|_| self.err(at, format!("expected a number, found `{tok}`")))
    }

    fn flag(&mut self) -> Result<bool> {
        let (at, tok) = self.token()?;
        match tok {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(self.err(at, format!("expected 0 or 1, found `{tok}`"))),
        }
    }

    fn float(&mut self) -> Result<f64> {
        let (at, tok) = self.token()?;
        if tok.len() != 16 {
            return Err(self.err(at, "float must be 16 hex digits"));
        }
        u64::from_str_radix(tok, 16)
            .map(f64::from_bits)
            .map_err(|_| self.err(at, format!("bad float bits `{tok}`")))
    }

    fn sized(&mut self) -> Result<(usize, &'a str)> {
        let (at, tok) = self.token()?;
        let (len, text) = tok
            .split_once(':')
            .ok_or_else(|| self.err(at, "expected a length-prefixed name"))?;
        let len: usize = len
            .parse()
            .map_err(|_| self.err(at, "bad length prefix"))?;
        if text.len() != len {
            return Err(self.err(at, format!("length prefix {len} does not match `{text}`")));
        }
        Ok((at, text))
    }

    fn dtype(&mut self) -> Result<DType> {
        let (at, tok) = self.token()?;
        DType::from_name(tok).ok_or_else(|| self.err(at, format!("unknown dtype `{tok}`")))
    }

    fn placement(&mut self) -> Result<Option<Placement>> {
        let (at, tok) = self.token()?;
        if tok == "-" {
            return Ok(None);
        }
        Placement::from_name(tok)
            .map(Some)
            .ok_or_else(|| self.err(at, format!("unknown placement `{tok}`")))
    }

    fn list<T: std::str::FromStr>(&mut self) -> Result<Vec<T>> {
        let n: usize = self.number()?;
        if n > self.src.len() {
            return Err(self.err(self.pos, "list length exceeds input size"));
        }
        (0..n).map(|_| self.number()).collect()
    }

    fn vars(&mut self) -> Result<Vec<Var>> {
        Ok(self.list::<u32>()?.into_iter().map(Var).collect())
    }

    fn graph(&mut self) -> Result<Graph> {
        let start = self.pos;
        self.expect("graph")?;
        self.expect("clients")?;
        let (at, tok) = self.token()?;
        let clients = match tok {
            "-" => None,
            t => {
                let n: usize = t
                    .parse()
                    .map_err(|_| self.err(at, format!("bad client count `{t}`")))?;
                Some(ClientCount::new(n).map_err(|e| self.err(at, e.to_string()))?)
            }
        };
        self.expect("vars")?;
        let count: usize = self.number()?;
        if count > self.src.len() {
            return Err(self.err(self.pos, "variable count exceeds input size"));
        }
        let mut vars = Vec::with_capacity(count);
        for _ in 0..count {
            self.expect("v")?;
            let dtype = self.dtype()?;
            let placement = self.placement()?;
            let shape = self.list()?;
            vars.push(AbstractValue {
                shape,
                dtype,
                placement,
            });
        }
        self.expect("inputs")?;
        let inputs = self.vars()?;
        let mut equations = Vec::new();
        loop {
            let (at, tok) = self.token()?;
            match tok {
                "eq" => equations.push(self.equation()?),
                "outputs" => break,
                _ => return Err(self.err(at, format!("expected `eq` or `outputs`, found `{tok}`"))),
            }
        }
        let outputs = self.vars()?;
        self.expect("end")?;
        Graph::from_parts(clients, vars, inputs, equations, outputs)
            .map_err(|e| self.err(start, e.to_string()))
    }

    fn equation(&mut self) -> Result<Equation> {
        let (_, name) = self.sized()?;
        let id = PrimitiveId::from_name(name)?;
        let primitive = match id {
            PrimitiveId::BroadcastClients => Primitive::BroadcastClients,
            PrimitiveId::SumFromClients => Primitive::SumFromClients,
            PrimitiveId::MeanFromClients => Primitive::MeanFromClients,
            PrimitiveId::Add => Primitive::Add,
            PrimitiveId::Sub => Primitive::Sub,
            PrimitiveId::Mul => Primitive::Mul,
            PrimitiveId::Div => Primitive::Div,
            PrimitiveId::Neg => Primitive::Neg,
            PrimitiveId::BatchedDot => Primitive::BatchedDot,
            PrimitiveId::BatchedOuter => Primitive::BatchedOuter,
            PrimitiveId::IntegerPow => {
                self.expect("exponent")?;
                Primitive::IntegerPow {
                    exponent: self.number()?,
                }
            }
            PrimitiveId::Scale => {
                self.expect("factor")?;
                Primitive::Scale {
                    factor: self.float()?,
                }
            }
            PrimitiveId::ReduceLeading => {
                self.expect("op")?;
                let (at, op) = self.sized()?;
                let op = ReduceOp::from_name(op)
                    .ok_or_else(|| self.err(at, format!("unknown reduction `{op}`")))?;
                self.expect("axis")?;
                let axis = self.number()?;
                self.expect("keepdims")?;
                let keepdims = self.flag()?;
                Primitive::ReduceLeading { op, axis, keepdims }
            }
            PrimitiveId::TileLeading => {
                self.expect("count")?;
                let count = self.number()?;
                self.expect("axis")?;
                let axis = self.number()?;
                self.expect("insert")?;
                let insert = self.flag()?;
                Primitive::TileLeading { count, axis, insert }
            }
            PrimitiveId::Constant => {
                self.expect("placement")?;
                let placement = self.placement()?;
                self.expect("dtype")?;
                let dtype = self.dtype()?;
                self.expect("shape")?;
                let shape: Vec<usize> = self.list()?;
                self.expect("data")?;
                let at = self.pos;
                let n: usize = self.number()?;
                if n > self.src.len() {
                    return Err(self.err(at, "constant length exceeds input size"));
                }
                let data = (0..n).map(|_| self.float()).collect::<Result<Vec<_>>>()?;
                let value = Tensor::with_dtype(shape, dtype, data)
                    .map_err(|e| self.err(at, e.to_string()))?;
                Primitive::Constant { value, placement }
            }
            PrimitiveId::MapClients => {
                self.expect("body")?;
                // The body follows the equation line.
                self.expect("in")?;
                let inputs = self.vars()?;
                self.expect("out")?;
                let outputs = self.vars()?;
                let body = self.graph()?;
                return Ok(Equation {
                    primitive: Primitive::MapClients {
                        body: Box::new(body),
                    },
                    inputs,
                    outputs,
                });
            }
        };
        self.expect("in")?;
        let inputs = self.vars()?;
        self.expect("out")?;
        let outputs = self.vars()?;
        Ok(Equation {
            primitive,
            inputs,
            outputs,
        })
    }
}

/// Parse the canonical encoding back into a validated graph.
pub fn parse(bytes: &[u8]) -> Result<Graph> {
    let src = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        reason: "input is not UTF-8".into(),
    })?;
    let mut c = Cursor { src, pos: 0 };
    let (at, magic) = c.token()?;
    if magic != MAGIC {
        return Err(c.err(at, format!("expected `{MAGIC}` header")));
    }
    let g = c.graph()?;
    let rest = &src[c.pos..];
    if !rest.trim().is_empty() {
        let at = c.pos + (rest.len() - rest.trim_start().len());
        return Err(c.err(at, "trailing data after graph"));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::GraphBuilder;

    fn sample() -> Graph {
        let n = ClientCount::new(2).unwrap();
        let mut b = GraphBuilder::new(Some(n));
        let x = b.input(AbstractValue::server(&[2], DType::F64));
        let y = b.broadcast_clients(x).unwrap();
        let z = b.scale(0.1, y).unwrap();
        let w = b.mean_from_clients(z).unwrap();
        b.finish(vec![w])
    }

    #[test]
    fn round_trip() {
        let g = sample();
        let bytes = serialize_canonical(&g);
        assert_eq!(parse(&bytes).unwrap(), g);
        assert_eq!(serialize_canonical(&parse(&bytes).unwrap()), bytes);
    }

    #[test]
    fn truncated_input_reports_offset() {
        let bytes = serialize_canonical(&sample());
        let cut = &bytes[..bytes.len() / 2];
        match parse(cut) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse(b"").is_err());
        assert!(parse(b"FEDGRAPH/2\n").is_err());
    }

    #[test]
    fn unknown_primitive_is_a_closure_error() {
        let text = String::from_utf8(serialize_canonical(&sample())).unwrap();
        let bad = text.replace("5:scale", "7:fusedop");
        assert!(matches!(parse(bad.as_bytes()), Err(Error::UnknownPrimitive(_))));
    }
}
