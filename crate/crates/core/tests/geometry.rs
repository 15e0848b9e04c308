mod common;

use approx::assert_relative_eq;
use mlcoda::{
    between_within_split, build_basis, closure, coordinates_of, default_sbp, validate_sbp,
    Basis32, Basis64, CodaError, Composition32, Composition64, LongTable64, Sbp,
};
use proptest::prelude::*;

use common::{aitchison_inner, clr, random_table, rng};

fn composition(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, dim).prop_map(|logs| logs.iter().map(|l| l.exp()).collect())
}

fn sized_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..=6).prop_flat_map(|d| (composition(d), composition(d)))
}

proptest! {
    #[test]
    fn closure_is_scale_invariant((x, _) in sized_pair(), c in 0.01f64..100.0) {
        let a = closure(&x, 1440.0).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let b = closure(&scaled, 1440.0).unwrap();
        for (u, v) in a.parts().iter().zip(b.parts()) {
            prop_assert!((u - v).abs() <= 1e-12 * u.max(1.0));
        }
    }

    #[test]
    fn ilr_is_an_isometry((x, y) in sized_pair()) {
        let dim = x.len();
        let basis: Basis64 = build_basis(&default_sbp(dim).unwrap());
        let cx = closure(&x, 1.0).unwrap();
        let cy = closure(&y, 1.0).unwrap();
        let zx = basis.ilr(&cx).unwrap();
        let zy = basis.ilr(&cy).unwrap();
        let want = aitchison_inner(cx.parts(), cy.parts());
        prop_assert!((zx.dot(&zy) - want).abs() < 1e-9 * want.abs().max(1.0));
        prop_assert!((cx.inner_product(&cy).unwrap() - want).abs() < 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn ilr_is_linear((x, y) in sized_pair(), alpha in -3.0f64..3.0) {
        let basis: Basis64 = build_basis(&default_sbp(x.len()).unwrap());
        let cx = closure(&x, 1.0).unwrap();
        let cy = closure(&y, 1.0).unwrap();
        let lhs = basis.ilr(&cx.perturb(&cy.power(alpha).unwrap()).unwrap()).unwrap();
        let rhs = basis.ilr(&cx).unwrap().add(&basis.ilr(&cy).unwrap().scale(alpha));
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ilr_round_trips((x, _) in sized_pair()) {
        let basis: Basis64 = build_basis(&default_sbp(x.len()).unwrap());
        let cx = closure(&x, 1440.0).unwrap();
        let back = basis.ilr_inverse(&basis.ilr(&cx).unwrap(), 1440.0).unwrap();
        for (a, b) in back.parts().iter().zip(cx.parts()) {
            prop_assert!((a - b).abs() <= 1e-10 * b);
        }
    }

    #[test]
    fn perturbation_by_opposite_is_neutral((x, _) in sized_pair()) {
        let cx = closure(&x, 1.0).unwrap();
        let e = cx.perturb(&cx.opposite()).unwrap();
        let neutral = Composition64::neutral(x.len(), 1.0).unwrap();
        for (a, b) in e.parts().iter().zip(neutral.parts()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn clr_of_neutral_element_is_zero() {
    let e = Composition64::neutral(4, 1440.0).unwrap();
    assert!(clr(e.parts()).iter().all(|v| v.abs() < 1e-15));
    assert_eq!(e.norm(), 0.0);
}

#[test]
fn two_part_basis_is_the_scaled_log_ratio() {
    let basis: Basis64 = build_basis(&default_sbp(2).unwrap());
    let x = closure(&[3.0, 1.0], 4.0).unwrap();
    let z = basis.ilr(&x).unwrap();
    assert_relative_eq!(z.values()[0], 3f64.ln() / 2f64.sqrt(), epsilon = 1e-15);
}

#[test]
fn invalid_partitions_are_rejected() {
    // a step that splits parts already separated earlier
    assert!(matches!(
        validate_sbp(&[vec![1, 1], vec![-1, 1], vec![-1, -1]]),
        Err(CodaError::InvalidSbp(_))
    ));
    // no +1 in the second column
    assert!(validate_sbp(&[vec![1, 0], vec![-1, -1], vec![-1, -1]]).is_err());
    assert!(validate_sbp(&[vec![1, 0], vec![-1, 2], vec![-1, -1]]).is_err());
    assert!(Sbp::parse("1,0\n-1,1\n").is_err());
}

#[test]
fn partition_text_round_trips() {
    let sbp = Sbp::parse("# time use\nsleep,pa,sb\n1,0\n-1,1\n-1,-1\n").unwrap();
    assert_eq!(sbp.part_names().unwrap(), ["sleep", "pa", "sb"]);
    assert_eq!(Sbp::parse(&sbp.to_text()).unwrap(), sbp);
}

#[test]
fn change_of_basis_maps_coordinates() {
    let a: Basis64 = build_basis(&default_sbp(4).unwrap());
    let b: Basis64 = build_basis(&Sbp::parse("1,1,0\n1,-1,0\n-1,0,1\n-1,0,-1\n").unwrap());
    let m = a.change_of_basis(&b).unwrap();
    let x = closure(&[5.0, 1.0, 2.0, 7.0], 1.0).unwrap();
    let za = a.ilr(&x).unwrap();
    let zb = b.ilr(&x).unwrap();
    for (i, row) in m.iter().enumerate() {
        let mapped: f64 = row.iter().zip(za.values()).map(|(r, z)| r * z).sum();
        assert_relative_eq!(mapped, zb.values()[i], epsilon = 1e-13);
    }
}

#[test]
fn single_precision_agrees_with_double() {
    let raw = [480.0, 60.0, 30.0, 210.0, 660.0];
    let b64: Basis64 = build_basis(&default_sbp(5).unwrap());
    let b32: Basis32 = build_basis(&default_sbp(5).unwrap());
    let z64 = b64.ilr(&closure(&raw, 1440.0).unwrap()).unwrap();
    let raw32: Vec<f32> = raw.iter().map(|&v| v as f32).collect();
    let x32: Composition32 = closure(&raw32, 1440.0).unwrap();
    let z32 = b32.ilr(&x32).unwrap();
    for (a, b) in z64.values().iter().zip(z32.values()) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
}

#[test]
fn decomposition_identities_on_unbalanced_tables() {
    let mut r = rng(8);
    for dim in 3..=5 {
        let table = random_table(&mut r, dim, 37, 9);
        let basis: Basis64 = build_basis(&default_sbp(dim).unwrap());
        let c = between_within_split(&table, &basis).unwrap();
        for i in 0..table.len() {
            let sum = c.between_of_row(i).add(&c.within[i]);
            for (a, b) in sum.values().iter().zip(c.total[i].values()) {
                assert!((a - b).abs() < 1e-12);
            }
            // the within composition is x perturbed by the inverse cluster mean
            let xb = &c.between_compositions[c.cluster_of_row[i]];
            let (zb, zw) = coordinates_of(&table.rows()[i].composition, xb, &basis).unwrap();
            for (a, b) in zw.values().iter().zip(c.within[i].values()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(zb.values(), c.between_of_row(i).values());
        }
    }
}

#[test]
fn singleton_clusters_have_zero_within_part() {
    let rows = vec![
        ("a".to_string(), closure(&[1.0, 2.0, 3.0], 6.0).unwrap(), None, vec![]),
        ("b".to_string(), closure(&[2.0, 2.0, 2.0], 6.0).unwrap(), None, vec![]),
        ("b".to_string(), closure(&[1.0, 1.0, 4.0], 6.0).unwrap(), None, vec![]),
    ];
    let names = vec!["x".into(), "y".into(), "z".into()];
    let table = LongTable64::from_rows(names, None, vec![], 6.0, rows).unwrap();
    let basis: Basis64 = build_basis(&default_sbp(3).unwrap());
    let c = between_within_split(&table, &basis).unwrap();
    assert!(c.within[0].values().iter().all(|v| v.abs() < 1e-15));
    assert_eq!(table.cluster_sizes(), vec![1, 2]);
}
