use proptest::prelude::*;

use fedring::chain::{Arg, ChainError, NodeTag, Session};
use fedring::fixedpoint::FixedPointConfig;
use fedring::net::codec::deserialize_object;
use fedring::net::{NetError, VirtualRegistry, WorkerId};
use fedring::tensor::Tensor;

fn wid(s: &str) -> WorkerId {
    WorkerId::new(s).unwrap()
}

fn session() -> (VirtualRegistry, Session) {
    let reg = VirtualRegistry::new();
    let mut s = Session::new(wid("me"), 9);
    for name in ["alice", "bob"] {
        reg.spawn(wid(name), 3).unwrap();
        s.add_worker(reg.connect(&wid(name)).unwrap());
    }
    (reg, s)
}

fn values(c: &fedring::chain::Chain) -> Vec<f64> {
    c.payload().unwrap().as_f64().unwrap().to_vec()
}

#[test]
fn send_and_get_rewrite_the_chain() {
    let (reg, mut s) = session();
    let t = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let mut c = s.tensor(t.clone());
    assert_eq!(c.tags(), vec![NodeTag::Head, NodeTag::Local]);
    s.send(&mut c, &wid("alice")).unwrap();
    assert_eq!(c.tags(), vec![NodeTag::Head, NodeTag::Pointer]);
    assert!(c.payload().is_none());
    c.validate().unwrap();

    let (owner, id) = c.pointer_target().unwrap();
    assert_eq!(owner, &wid("alice"));
    let alice = reg.worker(&wid("alice")).unwrap();
    let stored = deserialize_object(&alice.store().fetch(id, false).unwrap()).unwrap();
    assert!(stored.tensor().bit_eq(&t));

    s.get(&mut c).unwrap();
    assert_eq!(c.tags(), vec![NodeTag::Head, NodeTag::Local]);
    assert!(c.payload().unwrap().bit_eq(&t));
    c.validate().unwrap();
    assert!(!alice.store().contains(id));
    let again = s.client(&wid("alice")).unwrap().fetch(id, true);
    assert!(matches!(again, Err(NetError::ObjectNotFound(_))));
}

#[test]
fn pointers_cannot_be_forwarded() {
    let (_reg, mut s) = session();
    let mut c = s.tensor(Tensor::vector(vec![1.0]));
    s.send(&mut c, &wid("alice")).unwrap();
    assert!(matches!(s.send(&mut c, &wid("bob")), Err(ChainError::KindMismatch(_))));
    let mut d = s.tensor(Tensor::vector(vec![1.0]));
    assert!(matches!(s.send(&mut d, &wid("nobody")), Err(ChainError::Net(NetError::WorkerUnknown(_)))));
}

#[test]
fn dispatch_on_local_and_remote_chains() {
    let (_reg, mut s) = session();
    let (tx, ty) = (Tensor::vector(vec![1.0, 2.0]), Tensor::vector(vec![3.0, 4.0]));
    let x = s.tensor(tx.clone());
    let y = s.tensor(ty.clone());
    let z = s.dispatch("add", &[&x, &y], &[]).unwrap();
    assert_eq!(values(&z), vec![4.0, 6.0]);

    let (mut px, mut py) = (s.tensor(tx), s.tensor(ty.clone()));
    s.send(&mut px, &wid("alice")).unwrap();
    s.send(&mut py, &wid("alice")).unwrap();
    let mut pz = s.dispatch("add", &[&px, &py], &[]).unwrap();
    assert_eq!(pz.tags(), vec![NodeTag::Head, NodeTag::Pointer]);
    assert_eq!(pz.pointer_target().unwrap().0, &wid("alice"));
    s.get(&mut pz).unwrap();
    assert_eq!(values(&pz), vec![4.0, 6.0]);

    assert!(matches!(s.dispatch("frobnicate", &[&x, &y], &[]), Err(ChainError::UnknownCommand(_))));
    assert!(matches!(s.dispatch("add", &[&x, &px], &[]), Err(ChainError::KindMismatch(_))));
    let mut qb = s.tensor(ty);
    s.send(&mut qb, &wid("bob")).unwrap();
    assert!(s.dispatch("add", &[&px, &qb], &[]).is_err());
}

#[test]
fn fix_precision_structure_and_zero() {
    let (_reg, mut s) = session();
    let cfg = FixedPointConfig::default();
    let mut z = s.tensor(Tensor::vector(vec![0.0]));
    s.fix_precision(&mut z, cfg).unwrap();
    assert_eq!(z.tags(), vec![NodeTag::Head, NodeTag::FixedPrecision, NodeTag::Local]);
    assert_eq!(z.payload().unwrap().as_ring().unwrap(), &[0]);

    let mut c = s.tensor(Tensor::vector(vec![7.0]));
    s.fix_precision(&mut c, cfg).unwrap();
    s.share(&mut c, &[wid("alice"), wid("bob")]).unwrap();
    assert_eq!(
        c.tags(),
        vec![NodeTag::Head, NodeTag::FixedPrecision, NodeTag::Shared, NodeTag::Pointer, NodeTag::Pointer]
    );
    c.validate().unwrap();
    s.get(&mut c).unwrap();
    s.float_precision(&mut c).unwrap();
    assert_eq!(values(&c), vec![7.0]);
}

#[test]
fn sharing_needs_two_distinct_parties() {
    let (_reg, mut s) = session();
    let mut c = s.tensor(Tensor::vector(vec![1.0]));
    s.fix_precision(&mut c, FixedPointConfig::default()).unwrap();
    assert!(s.share(&mut c, &[wid("alice")]).is_err());
    assert!(s.share(&mut c, &[wid("alice"), wid("alice")]).is_err());
}

#[test]
fn dropped_pointers_are_collected() {
    let (reg, mut s) = session();
    let alice = reg.worker(&wid("alice")).unwrap();
    let mut c = s.tensor(Tensor::vector(vec![1.0, 2.0]));
    s.send(&mut c, &wid("alice")).unwrap();
    assert_eq!(alice.store().len(), 1);
    drop(c);
    s.collect_garbage();
    assert!(alice.store().is_empty());
}

#[test]
fn shared_scale_and_sigmoid_track_plaintext() {
    let (reg, mut s) = session();
    reg.spawn(wid("dealer"), 4).unwrap();
    s.add_worker(reg.connect(&wid("dealer")).unwrap());
    s.set_dealer(wid("dealer"));
    let parties = [wid("alice"), wid("bob")];
    let cfg = FixedPointConfig::default();
    let xs = vec![-2.0, -0.5, 0.0, 1.25, 3.0];
    let mut x = s.tensor(Tensor::vector(xs.clone()));
    s.fix_precision(&mut x, cfg).unwrap();
    s.share(&mut x, &parties).unwrap();
    s.preprocess(fedring::spdz::TripleKind::Elementwise, &[5], &[5], &parties, 2).unwrap();

    let mut y = s.dispatch("scale", &[&x], &[Arg::Float(0.5)]).unwrap();
    s.get(&mut y).unwrap();
    s.float_precision(&mut y).unwrap();
    for (a, b) in values(&y).iter().zip(&xs) {
        assert!((a - 0.5 * b).abs() < 1e-4, "{a} vs {}", 0.5 * b);
    }

    let mut z = s.dispatch("sigmoid_poly", &[&x], &[]).unwrap();
    s.get(&mut z).unwrap();
    s.float_precision(&mut z).unwrap();
    for (a, b) in values(&z).iter().zip(&xs) {
        let want = fedring::tensor::sigmoid_poly(*b);
        assert!((a - want).abs() < 1e-3, "{a} vs {want}");
    }
    assert_eq!(s.triples_available(fedring::spdz::TripleKind::Elementwise, &[5], &[5], &parties), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn remote_dispatch_matches_local(
        a in prop::collection::vec(-1e3f64..1e3, 6),
        b in prop::collection::vec(-1e3f64..1e3, 6),
        op in prop::sample::select(vec!["add", "sub", "mul", "matmul", "transpose", "neg"]),
    ) {
        let (_reg, mut s) = session();
        let tx = Tensor::from_f64([2, 3], a).unwrap();
        let ty = Tensor::from_f64(if op == "matmul" { [3, 2] } else { [2, 3] }, b).unwrap();
        let x = s.tensor(tx.clone());
        let y = s.tensor(ty.clone());
        let unary = matches!(op, "transpose" | "neg");
        let local = if unary { s.dispatch(op, &[&x], &[]) } else { s.dispatch(op, &[&x, &y], &[]) }.unwrap();
        let (mut px, mut py) = (s.tensor(tx), s.tensor(ty));
        s.send(&mut px, &wid("bob")).unwrap();
        s.send(&mut py, &wid("bob")).unwrap();
        let mut remote = if unary { s.dispatch(op, &[&px], &[]) } else { s.dispatch(op, &[&px, &py], &[]) }.unwrap();
        s.get(&mut remote).unwrap();
        prop_assert!(remote.payload().unwrap().bit_eq(local.payload().unwrap()));
    }

    #[test]
    fn fixed_precision_roundtrip(v in prop::collection::vec(-1e4f64..1e4, 1..8)) {
        let (_reg, mut s) = session();
        let mut c = s.tensor(Tensor::vector(v.clone()));
        s.fix_precision(&mut c, FixedPointConfig::default()).unwrap();
        s.float_precision(&mut c).unwrap();
        for (a, b) in values(&c).iter().zip(&v) {
            prop_assert!((a - b).abs() <= 2f64.powi(-17));
        }
    }
}
