use std::collections::HashSet;
use std::fmt::Write;

use crate::ir::{Graph, Primitive, Var};
use crate::tensor::Tensor;

/// Variable names in definition order: a..z, ba, bb, ...
fn var_name(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (i % 26) as u8);
        i /= 26;
        if i == 0 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn literal(v: f64) -> String {
    format!("{v:?}")
}

fn type_str(g: &Graph, v: Var) -> String {
    let av = g.value(v);
    let dims: Vec<String> = av.shape.iter().map(|d| d.to_string()).collect();
    format!("{}[{}]", av.dtype, dims.join(","))
}

fn tensor_literal(t: &Tensor) -> String {
    let vals: Vec<String> = t.data().iter().map(|&v| literal(v)).collect();
    format!("[{}]", vals.join(","))
}

/// JAX-style listing. Single-element constants are printed inline where
/// they are used; results nobody reads are written `_`.
pub fn serialize_text(g: &Graph) -> String {
    let mut out = String::new();
    write_graph(g, 0, &mut out);
    out
}

fn write_graph(g: &Graph, indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    let mut names: Vec<Option<String>> = vec![None; g.vars().len()];
    let mut next = 0;
    let mut fresh = || {
        let n = var_name(next);
        next += 1;
        n
    };
    let mut used: HashSet<Var> = g.outputs().iter().copied().collect();
    for eq in g.equations() {
        used.extend(eq.inputs.iter().copied());
    }
    let inputs: Vec<String> = g
        .inputs()
        .iter()
        .map(|&v| {
            let n = fresh();
            names[v.index()] = Some(n.clone());
            format!("{n}:{}", type_str(g, v))
        })
        .collect();
    let sep = if inputs.is_empty() { "" } else { " " };
    let _ = writeln!(out, "{{ lambda ;{sep}{}. let", inputs.join(" "));
    for eq in g.equations() {
        if let Primitive::Constant { value, .. } = &eq.primitive {
            if value.len() == 1 {
                names[eq.outputs[0].index()] = Some(literal(value.data()[0]));
                continue;
            }
        }
        let outs: Vec<String> = eq
            .outputs
            .iter()
            .map(|&v| {
                let n = if used.contains(&v) { fresh() } else { "_".to_string() };
                if n != "_" {
                    names[v.index()] = Some(n.clone());
                }
                format!("{n}:{}", type_str(g, v))
            })
            .collect();
        let args: Vec<String> = eq
            .inputs
            .iter()
            .map(|v| names[v.index()].clone().unwrap_or_else(|| "?".into()))
            .collect();
        let head = format!("{pad}    {} = ", outs.join(" "));
        match &eq.primitive {
            Primitive::MapClients { body } => {
                let _ = writeln!(out, "{head}map_clients[");
                let _ = write!(out, "{pad}      body=");
                let mut inner = String::new();
                write_graph(body, indent + 6, &mut inner);
                out.push_str(inner.trim_start());
                let _ = writeln!(out, "{pad}    ] {}", args.join(" "));
            }
            p => {
                let _ = writeln!(out, "{head}{}{}", head_of(p), with_args(&args));
            }
        }
    }
    let outs: Vec<String> = g
        .outputs()
        .iter()
        .map(|v| names[v.index()].clone().unwrap_or_else(|| "?".into()))
        .collect();
    let tuple = match outs.len() {
        1 => format!("({},)", outs[0]),
        _ => format!("({})", outs.join(", ")),
    };
    let _ = writeln!(out, "{pad}  in {tuple} }}");
}

fn with_args(args: &[String]) -> String {
    if args.is_empty() {
        String::new()
    } else {
        format!(" {}", args.join(" "))
    }
}

fn head_of(p: &Primitive) -> String {
    let name = p.id().name();
    match p {
        Primitive::IntegerPow { exponent } => format!("{name}[y={exponent}]"),
        Primitive::Scale { factor } => format!("{name}[c={}]", literal(*factor)),
        Primitive::ReduceLeading { op, axis, keepdims } => {
            format!("{name}[op={} axis={axis} keepdims={keepdims}]", op.name())
        }
        Primitive::TileLeading { count, axis, insert } => {
            format!("{name}[n={count} axis={axis} insert={insert}]")
        }
        Primitive::Constant { value, placement } => {
            let at = placement.map(|p| format!(" placement={p}")).unwrap_or_default();
            format!("{name}[value={}{at}]", tensor_literal(value))
        }
        _ => name.to_string(),
    }
}
