use std::io::BufReader;

use hcalab::envs::{frozenlake_4x4, two_arm};
use hcalab::mdp::{evaluate_policy, exact_policy_gradient, read_mdp, read_policy, write_mdp, write_policy};
use hcalab::PolicyTable;

const TWO_ARM: &str = include_str!("data/two_arm.mdp");

#[test]
fn golden_two_arm_file_matches_constructor() {
    let mdp = read_mdp(BufReader::new(TWO_ARM.as_bytes())).unwrap();
    assert_eq!(mdp, two_arm());
    let pi = PolicyTable::for_mdp(&mdp);
    let v = evaluate_policy(&mdp, &pi, 1e-14).unwrap();
    assert!((v[0] - 0.5).abs() < 1e-15);
    let g = exact_policy_gradient(&mdp, &pi, 4).unwrap();
    assert!((g.get(0, 1) - 0.25).abs() < 1e-15);
    assert!((g.get(0, 0) + 0.25).abs() < 1e-15);
}

#[test]
fn written_frozenlake_reads_back_bit_for_bit() {
    let lake = frozenlake_4x4(true, -1.0, 0.99);
    let mut buf = Vec::new();
    write_mdp(&lake, &mut buf).unwrap();
    let back = read_mdp(BufReader::new(buf.as_slice())).unwrap();
    assert_eq!(back, lake);

    let pi = PolicyTable::from_logits(16, 4, (0..64).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let mut pbuf = Vec::new();
    write_policy(&pi, &mut pbuf).unwrap();
    let pi_back = read_policy(BufReader::new(pbuf.as_slice())).unwrap();
    assert_eq!(pi_back, pi);
    let a = evaluate_policy(&lake, &pi, 1e-12).unwrap();
    let b = evaluate_policy(&back, &pi_back, 1e-12).unwrap();
    assert_eq!(a, b);
}

#[test]
fn malformed_file_is_rejected() {
    let broken = TWO_ARM.replace("transition 0 1 0 0 1", "transition 0 1 0 0.5 0.4");
    assert!(read_mdp(BufReader::new(broken.as_bytes())).is_err());
    let truncated: String = TWO_ARM.lines().take(8).collect::<Vec<_>>().join("\n");
    assert!(read_mdp(BufReader::new(truncated.as_bytes())).is_err());
}
