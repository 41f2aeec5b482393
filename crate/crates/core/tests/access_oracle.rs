use pcsr_core::access::{
    decrypt_frame, encrypt_frame, keygen, satisfies, setup, AttributeSet, CryptoError, EncryptedFrame, Granularity,
    MasterKeys, PolicyTree,
};
use pcsr_core::PointCloud;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const UNIVERSE: [&str; 4] = ["Role:A", "Role:B", "Dept:C", "Site:D"];

/// Test-side policy model, evaluated by counting rather than through the
/// library's evaluator.
#[derive(Debug, Clone)]
enum Expr {
    Leaf(usize),
    Gate(usize, Vec<Expr>),
}

impl Expr {
    fn eval(&self, mask: u32) -> bool {
        match self {
            Expr::Leaf(a) => mask & (1 << a) != 0,
            Expr::Gate(k, children) => children.iter().filter(|c| c.eval(mask)).count() >= *k,
        }
    }

    fn leaves(&self) -> usize {
        match self {
            Expr::Leaf(_) => 1,
            Expr::Gate(_, c) => c.iter().map(Expr::leaves).sum(),
        }
    }

    fn to_policy(&self) -> PolicyTree {
        match self {
            Expr::Leaf(a) => PolicyTree::leaf(UNIVERSE[*a]),
            Expr::Gate(k, c) => {
                let children = c.iter().map(Expr::to_policy).collect::<Vec<_>>();
                let n = children.len();
                if *k == n && n >= 2 {
                    PolicyTree::and(children)
                } else if *k == 1 && n >= 2 {
                    PolicyTree::or(children)
                } else {
                    PolicyTree::threshold(*k, children)
                }
            }
        }
    }
}

fn expr(max_leaves: usize) -> BoxedStrategy<Expr> {
    let leaf = (0..4usize).prop_map(Expr::Leaf).boxed();
    if max_leaves <= 1 {
        return leaf;
    }
    let gate = (2..=max_leaves.min(3))
        .prop_flat_map(move |n| {
            let per = (max_leaves / n).max(1);
            (prop::collection::vec(expr(per), n), 1..=n)
        })
        .prop_map(|(children, k)| Expr::Gate(k, children))
        .boxed();
    prop_oneof![leaf, gate].boxed()
}

fn attrs(mask: u32) -> Option<AttributeSet> {
    let labels: Vec<&str> = (0..4).filter(|i| mask & (1 << i) != 0).map(|i| UNIVERSE[i]).collect();
    (!labels.is_empty()).then(|| AttributeSet::new(labels).unwrap())
}

fn master() -> MasterKeys {
    let mut mk = setup(b"access oracle tests: 32+ byte seed").unwrap();
    mk.publish(UNIVERSE).unwrap();
    mk
}

fn small_cloud() -> PointCloud {
    PointCloud::new(vec![[0.25, -1.5, 3.0], [1e-9, 2.0, -0.0], [7.0, 7.0, 7.0]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn satisfies_and_decryption_match_truth_table(e in expr(4)) {
        prop_assume!(e.leaves() <= 4);
        let policy = e.to_policy();
        policy.validate().unwrap();
        let reparsed: PolicyTree = policy.to_string().parse().unwrap();
        prop_assert_eq!(&reparsed, &policy);

        let mk = master();
        let cloud = small_cloud();
        let mut rng = ChaCha20Rng::seed_from_u64(e.leaves() as u64);
        let ef = encrypt_frame(&cloud, &policy, Granularity::Xyz, mk.public_params(), &mut rng).unwrap();
        for mask in 1u32..16 {
            let a = attrs(mask).unwrap();
            let want = e.eval(mask);
            prop_assert_eq!(satisfies(&policy, &a), want);
            let uk = keygen(&mk, &a).unwrap();
            match decrypt_frame(&ef, &uk) {
                Ok(c) => {
                    prop_assert!(want);
                    prop_assert!(c.bit_eq(&cloud));
                }
                Err(err) => {
                    prop_assert!(!want);
                    prop_assert_eq!(err, CryptoError::PolicyNotSatisfied);
                }
            }
        }
    }

    #[test]
    fn roundtrip_is_bit_exact(
        pts in prop::collection::vec(prop::array::uniform3(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL), 1..200),
        gran_idx in 0usize..3,
        seed in any::<u64>(),
    ) {
        let mk = master();
        let uk = keygen(&mk, &attrs(0b1111).unwrap()).unwrap();
        let policy: PolicyTree = "thresh(2; Role:A, Dept:C, Site:D)".parse().unwrap();
        let cloud = PointCloud::new(pts).unwrap();
        let gran = Granularity::ALL[gran_idx];
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ef = encrypt_frame(&cloud, &policy, gran, mk.public_params(), &mut rng).unwrap();
        prop_assert_eq!(ef.ciphertext.len(), cloud.len() * gran.columns() * 8 + 16);
        let parsed = EncryptedFrame::from_ply_bytes(&ef.to_ply_bytes().unwrap()).unwrap();
        prop_assert!(decrypt_frame(&parsed, &uk).unwrap().bit_eq(&cloud));
    }

    #[test]
    fn any_tamper_fails_authentication(byte in 0usize..64, bit in 0u8..8) {
        let mk = master();
        let uk = keygen(&mk, &attrs(0b0001).unwrap()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(byte as u64);
        let mut ef = encrypt_frame(&small_cloud(), &PolicyTree::leaf("Role:A"), Granularity::Xyz, mk.public_params(), &mut rng).unwrap();
        let i = byte % ef.ciphertext.len();
        ef.ciphertext[i] ^= 1 << bit;
        prop_assert_eq!(decrypt_frame(&ef, &uk).unwrap_err(), CryptoError::AuthenticationFailure);
    }
}

#[test]
fn threshold_two_of_three_exhaustive() {
    let policy: PolicyTree = "thresh(2; Role:A, Role:B, Dept:C)".parse().unwrap();
    for mask in 1u32..8 {
        let a = attrs(mask).unwrap();
        assert_eq!(satisfies(&policy, &a), mask.count_ones() >= 2, "mask {mask:03b}");
    }
    let ac = AttributeSet::parse_list("Role:A,Dept:C").unwrap();
    assert!(satisfies(&policy, &ac));
}

#[test]
fn empty_attribute_set_rejected() {
    assert_eq!(
        AttributeSet::new(Vec::<String>::new()).unwrap_err(),
        CryptoError::EmptyAttributeSet
    );
}

#[test]
fn master_secret_never_in_frames() {
    let mk = master();
    let secret = &mk.to_bytes()[5..37];
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let ef = encrypt_frame(
        &small_cloud(),
        &PolicyTree::leaf("Role:A"),
        Granularity::Xyz,
        mk.public_params(),
        &mut rng,
    )
    .unwrap();
    let bytes = ef.to_ply_bytes().unwrap();
    assert!(!bytes.windows(32).any(|w| w == secret));
}
