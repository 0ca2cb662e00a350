use ltss_core::random::SeededRandom;
use ltss_core::renewal::{renewal_round, RenewalFault, RenewalGroup, RenewalOutcome};
use ltss_core::spss::{spss_register, HolderShareSet, Password, SpssParams};
use num_traits::ToPrimitive;

const Q: u64 = 11;

fn inv(x: u64) -> u64 {
    (1..Q).find(|y| x * y % Q == 1).unwrap()
}

/// Lagrange at zero over `(x, y)` in F_11.
fn at_zero(points: &[(u64, u64)]) -> u64 {
    points.iter().enumerate().fold(0, |acc, (k, &(xk, yk))| {
        let (num, den) = points.iter().enumerate().filter(|&(m, _)| m != k).fold((1, 1), |(n, d), (_, &(xm, _))| {
            (n * xm % Q, d * ((Q + xm - xk) % Q) % Q)
        });
        (acc + yk * num % Q * inv(den)) % Q
    })
}

fn share(h: &HolderShareSet, block: usize) -> u64 {
    h.secret(1).unwrap().data_shares[block].value().to_u64().unwrap()
}

fn setup(seed: u64) -> (SpssParams, Vec<HolderShareSet>) {
    let group = RenewalGroup::toy();
    let params = SpssParams::new(3, 4, group.field().clone()).unwrap();
    let pw = Password::from_element(group.field().element(5u32)).unwrap();
    let mut rng = SeededRandom::new(seed);
    let reg = spss_register(1, 0, &[0x6Du8], &pw, &params, &mut rng).unwrap();
    let mut hs: Vec<HolderShareSet> = (1..=4).map(HolderShareSet::new).collect();
    for (h, f) in hs.iter_mut().zip(reg.fragments) {
        h.store(f).unwrap();
    }
    (params, hs)
}

fn rngs(seed: u64) -> Vec<SeededRandom> {
    (0..4).map(|i| SeededRandom::derive(seed, &format!("renew{i}"))).collect()
}

#[test]
fn mixing_old_and_new_shares_misses_the_secret() {
    let group = RenewalGroup::toy();
    let trials = 2000;
    let mut misses = 0;
    for seed in 0..trials {
        let (params, mut hs) = setup(seed);
        let old = hs.clone();
        let secret = at_zero(&[(1, share(&hs[0], 0)), (2, share(&hs[1], 0)), (3, share(&hs[2], 0))]);
        assert_eq!(renewal_round(&group, &params, &mut hs, 0, &mut rngs(seed), None).unwrap(), RenewalOutcome::Updated);
        let fresh = at_zero(&[(1, share(&hs[0], 0)), (2, share(&hs[1], 0)), (3, share(&hs[2], 0))]);
        assert_eq!(fresh, secret);
        let mixed = at_zero(&[(1, share(&old[0], 0)), (2, share(&hs[1], 0)), (3, share(&hs[2], 0))]);
        misses += (mixed != secret) as u32;
    }
    let p = 1.0 / Q as f64;
    let floor = 1.0 - p - 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    let rate = misses as f64 / trials as f64;
    assert!(rate >= floor, "mixed shares missed the secret at rate {rate:.4} < {floor:.4}");
}

#[test]
fn inconsistent_share_names_the_sender_and_changes_nothing() {
    let group = RenewalGroup::toy();
    let (params, mut hs) = setup(9);
    let before = hs.clone();
    let fault = RenewalFault { sender: 2, recipient: 4 };
    let outcome = renewal_round(&group, &params, &mut hs, 0, &mut rngs(9), Some(fault)).unwrap();
    assert_eq!(outcome, RenewalOutcome::Accused { accuser: 4, accused: 2 });
    assert_eq!(hs, before);
}
