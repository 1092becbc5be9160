use crate::error::{Error, Result};
use crate::ir::{Graph, PrimitiveId};

/// Check that every name belongs to the registered primitive set.
pub fn check_primitive_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<()> {
    for name in names {
        PrimitiveId::from_name(name)?;
    }
    Ok(())
}

/// Validate `g` (bodies included) and check that it only uses registered
/// primitives.
pub fn check_closure(g: &Graph) -> Result<()> {
    g.validate()?;
    let ids = g.primitive_ids();
    check_primitive_names(ids.iter().map(|p| p.name())).map_err(|e| match e {
        Error::UnknownPrimitive(name) => {
            Error::UnknownPrimitive(format!("{name} is outside the closed primitive set"))
        }
        other => other,
    })
}
