//! Placed values: a tensor whose leading axis is the cardinality of its
//! placement (1 for the server, the client count for clients).

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    Server,
    Clients,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::Server => "server",
            Placement::Clients => "clients",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "server" => Some(Placement::Server),
            "clients" => Some(Placement::Clients),
            _ => None,
        }
    }

    pub fn cardinality(self, clients: ClientCount) -> usize {
        match self {
            Placement::Server => 1,
            Placement::Clients => clients.get(),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of clients a program is bound to. Always at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClientCount(usize);

impl ClientCount {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument {
                op: "client_count",
                reason: "a federated program needs at least one client".into(),
            });
        }
        Ok(ClientCount(n))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClientCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedTensor {
    tensor: Tensor,
    placement: Placement,
}

impl PlacedTensor {
    /// Wrap a tensor that already carries its placement axis.
    pub fn new(tensor: Tensor, placement: Placement, clients: ClientCount) -> Result<Self> {
        let expected = placement.cardinality(clients);
        match tensor.shape().first() {
            Some(&extent) if extent == expected => Ok(PlacedTensor { tensor, placement }),
            extent => Err(Error::Placement {
                op: "place".into(),
                reason: format!(
                    "{placement}-placed value needs leading extent {expected}, got {extent:?}"
                ),
            }),
        }
    }

    /// Wrap a tensor whose leading axis was produced by stacking per-slice
    /// results of an already placed value.
    pub(crate) fn from_stacked(tensor: Tensor, placement: Placement) -> Self {
        PlacedTensor { tensor, placement }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    /// Extent of the placement axis.
    pub fn cardinality(&self) -> usize {
        self.tensor.shape()[0]
    }
}

/// Prepend an axis of extent 1 and tag the result as server-placed.
pub fn place_server(t: &Tensor) -> PlacedTensor {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    PlacedTensor {
        tensor: t.reshape(shape).expect("adding a unit axis keeps the element count"),
        placement: Placement::Server,
    }
}

/// Stack one tensor per client along a new leading axis.
pub fn place_clients(per_client: &[Tensor], clients: ClientCount) -> Result<PlacedTensor> {
    if per_client.len() != clients.get() {
        return Err(Error::Placement {
            op: "place_clients".into(),
            reason: format!(
                "got {} client values for {} declared clients",
                per_client.len(),
                clients
            ),
        });
    }
    Ok(PlacedTensor {
        tensor: Tensor::stack(per_client)?,
        placement: Placement::Clients,
    })
}

/// The value held by client `index`, without the placement axis.
pub fn client_slice(x: &PlacedTensor, index: usize) -> Result<Tensor> {
    if x.placement != Placement::Clients {
        return Err(Error::Placement {
            op: "client_slice".into(),
            reason: "value is server-placed".into(),
        });
    }
    x.tensor.index_leading(index)
}

/// Drop the placement axis of a server-placed value.
pub fn unplace(x: &PlacedTensor) -> Result<Tensor> {
    if x.placement != Placement::Server {
        return Err(Error::Placement {
            op: "unplace".into(),
            reason: "only server-placed values have a single payload".into(),
        });
    }
    x.tensor.index_leading(0)
}

/// A finite tree of tuples and string-keyed records with placed leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum PlacedStructure {
    Leaf(PlacedTensor),
    Tuple(Vec<PlacedStructure>),
    Record(BTreeMap<String, PlacedStructure>),
}

impl PlacedStructure {
    /// Leaves in canonical order (depth first, record keys sorted), each with
    /// its path from the root.
    pub fn leaves(&self) -> Vec<(String, &PlacedTensor)> {
        let mut out = Vec::new();
        self.collect_leaves(String::new(), &mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, path: String, out: &mut Vec<(String, &'a PlacedTensor)>) {
        match self {
            PlacedStructure::Leaf(t) => {
                let path = if path.is_empty() { "<root>".to_string() } else { path };
                out.push((path, t));
            }
            PlacedStructure::Tuple(items) => {
                for (i, item) in items.iter().enumerate() {
                    item.collect_leaves(format!("{path}[{i}]"), out);
                }
            }
            PlacedStructure::Record(fields) => {
                for (key, item) in fields {
                    item.collect_leaves(format!("{path}.{key}"), out);
                }
            }
        }
    }
}

/// Check that every leaf shares one placement and one leading extent.
/// Returns that placement, or `None` for a structure without leaves.
pub fn validate_structure(s: &PlacedStructure) -> Result<Option<Placement>> {
    let leaves = s.leaves();
    let Some((_, first)) = leaves.first() else {
        return Ok(None);
    };
    let (placement, extent) = (first.placement(), first.cardinality());
    let offending: Vec<String> = leaves
        .iter()
        .filter(|(_, t)| t.placement() != placement || t.cardinality() != extent)
        .map(|(path, t)| format!("{path} ({}, extent {})", t.placement(), t.cardinality()))
        .collect();
    if offending.is_empty() {
        Ok(Some(placement))
    } else {
        Err(Error::MixedStructure { paths: offending })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(k: usize) -> ClientCount {
        ClientCount::new(k).unwrap()
    }

    #[test]
    fn zero_clients_rejected() {
        assert!(ClientCount::new(0).is_err());
        assert_eq!(n(3).get(), 3);
    }

    #[test]
    fn place_server_adds_unit_axis() {
        let p = place_server(&Tensor::vector(&[1., 2.]));
        assert_eq!(p.tensor().shape(), &[1, 2]);
        assert_eq!(p.placement(), Placement::Server);
        let s = place_server(&Tensor::scalar(5.0));
        assert_eq!((s.tensor().shape(), s.tensor().data()), (&[1][..], &[5.0][..]));
        let t = Tensor::vector(&[0.3, -1.0]);
        assert!(unplace(&place_server(&t)).unwrap().bit_eq(&t));
    }

    #[test]
    fn place_clients_checks_count_and_shapes() {
        let xs = [
            Tensor::vector(&[1., 2.]),
            Tensor::vector(&[3., 4.]),
            Tensor::vector(&[5., 6.]),
        ];
        let p = place_clients(&xs, n(3)).unwrap();
        assert_eq!(p.tensor().shape(), &[3, 2]);
        assert!(place_clients(&xs[..2], n(3)).is_err());
        let ragged = [Tensor::vector(&[1.]), Tensor::vector(&[1., 2.])];
        assert!(place_clients(&ragged, n(2)).is_err());
        for (i, x) in xs.iter().enumerate() {
            assert!(client_slice(&p, i).unwrap().bit_eq(x));
        }
        assert!(client_slice(&p, 3).is_err());
        assert!(client_slice(&place_server(&xs[0]), 0).is_err());
    }

    #[test]
    fn placed_tensor_checks_leading_extent() {
        let t = Tensor::matrix(&[[1., 2.], [3., 4.]]);
        assert!(PlacedTensor::new(t.clone(), Placement::Clients, n(2)).is_ok());
        assert!(PlacedTensor::new(t.clone(), Placement::Clients, n(3)).is_err());
        assert!(PlacedTensor::new(t, Placement::Server, n(2)).is_err());
        assert!(PlacedTensor::new(Tensor::scalar(1.0), Placement::Server, n(1)).is_err());
    }

    fn clients_leaf(k: usize) -> PlacedStructure {
        PlacedStructure::Leaf(
            PlacedTensor::new(Tensor::zeros(&[k, 2], Default::default()), Placement::Clients, n(k))
                .unwrap(),
        )
    }

    #[test]
    fn structure_validation() {
        let ok = PlacedStructure::Tuple(vec![clients_leaf(3), clients_leaf(3)]);
        assert_eq!(validate_structure(&ok).unwrap(), Some(Placement::Clients));

        let mixed = PlacedStructure::Tuple(vec![
            clients_leaf(3),
            PlacedStructure::Leaf(place_server(&Tensor::vector(&[1.0]))),
        ]);
        match validate_structure(&mixed) {
            Err(Error::MixedStructure { paths }) => {
                assert_eq!(paths.len(), 1);
                assert!(paths[0].starts_with("[1]"));
            }
            other => panic!("expected mixed placement error, got {other:?}"),
        }

        assert_eq!(validate_structure(&PlacedStructure::Tuple(vec![])).unwrap(), None);

        let mut fields = BTreeMap::new();
        fields.insert("b".to_string(), clients_leaf(3));
        fields.insert("a".to_string(), clients_leaf(2));
        let rec = PlacedStructure::Record(fields);
        let paths: Vec<String> = rec.leaves().into_iter().map(|(p, _)| p).collect();
        assert_eq!(paths, [".a", ".b"]);
        assert!(validate_structure(&rec).is_err());
    }

    proptest! {
        #[test]
        fn place_and_slice_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1e9f64..1e9, 3), 1..6)) {
            let xs: Vec<Tensor> = rows.iter().map(|r| Tensor::vector(r)).collect();
            let count = n(xs.len());
            let placed = place_clients(&xs, count).unwrap();
            prop_assert_eq!(placed.cardinality(), count.get());
            for (i, x) in xs.iter().enumerate() {
                prop_assert!(client_slice(&placed, i).unwrap().bit_eq(x));
            }
            prop_assert!(unplace(&place_server(&xs[0])).unwrap().bit_eq(&xs[0]));
        }
    }
}
