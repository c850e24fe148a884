use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cpi_scma::channel::{superimpose, ChannelState};
use cpi_scma::{BlockFormat, Codebook, IndexLut, NormalizeMode, SymbolMapping};

// Summed by hand from the codebook file with a separate script.
const EXPECTED: [(f64, f64); 16] = [
    (2.0397003109502547, -1.1776215235932932),
    (0.5827715174143585, -0.33646329245522666),
    (-0.291385758707179, 1.1776215235932932),
    (-1.1655430348287172, -0.33646329245522666),
    (-0.6799001036500852, -1.1776215235932932),
    (-0.1942571724714529, -0.3364632924552266),
    (-0.1942571724714529, -0.3364632924552266),
    (0.6799001036500852, 1.1776215235932932),
    (-0.6799001036500847, 1.1776215235932932),
    (-0.3885143449429057, 0.0),
    (0.1942571724714529, 0.3364632924552266),
    (0.485642931178632, -0.8411582311380665),
    (0.6799001036500848, -1.1776215235932932),
    (-0.3885143449429057, 5.551115123125783e-17),
    (1.0684144485929905, -1.1776215235932932),
    (0.0, 0.0),
];

#[test]
fn six_user_frame_matches_hand_sum() {
    let cb = Codebook::bundled();
    let f = BlockFormat::new(
        IndexLut::new(4, 2).unwrap(),
        4,
        SymbolMapping::Natural,
        NormalizeMode::BlockEnergy,
    )
    .unwrap();
    let bits: [[u8; 6]; 6] = [
        [0, 0, 0, 1, 1, 0],
        [1, 1, 0, 0, 0, 0],
        [0, 1, 1, 1, 1, 1],
        [1, 0, 1, 0, 0, 1],
        [0, 0, 1, 1, 0, 0],
        [1, 1, 1, 0, 0, 1],
    ];
    let blocks: Vec<_> = bits
        .iter()
        .enumerate()
        .map(|(j, b)| f.encode(b, j).unwrap())
        .collect();
    let ch = ChannelState::unit(6, 16);
    let y = superimpose(&blocks, &cb, &ch, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (s, (got, &(re, im))) in y.chips.iter().zip(EXPECTED.iter()).enumerate() {
        assert!(
            (got - Complex64::new(re, im)).norm() < 1e-12,
            "chip {s}: {got}"
        );
    }
}

#[test]
fn two_disjoint_users_concatenate() {
    let cb = Codebook::bundled().select_users(&[0, 1]).unwrap();
    let f = BlockFormat::new(
        IndexLut::degenerate(),
        4,
        SymbolMapping::Natural,
        NormalizeMode::BlockEnergy,
    )
    .unwrap();
    let a = f.encode(&[1, 0], 0).unwrap();
    let b = f.encode(&[0, 1], 1).unwrap();
    let ch = ChannelState::unit(2, 4);
    let y = superimpose(
        &[a.clone(), b.clone()],
        &cb,
        &ch,
        0.0,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let (ca, cbk) = (a.chips(&cb), b.chips(&cb));
    for s in 0..4 {
        let want = if ca[s] != Complex64::new(0.0, 0.0) {
            ca[s]
        } else {
            cbk[s]
        };
        assert_eq!(y.chips[s], want);
    }
}
