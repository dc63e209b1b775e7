use venetian::direction::Direction;
use venetian::rational::Rational;
use venetian::schedule::*;

fn main() {
    let user = vec![Direction::from_ints(&[1, 0]).unwrap()];
    let sched = build_schedule(&user, 2, 16).unwrap();
    let mut cfg = PlannerConfig::new(Rational::ratio(1, 2), OptionKind::Capacity, 2);
    cfg.growth = Rational::one();
    cfg.k_ramp = 99;
    let state = PlanState {
        k: 5,
        n_hist: vec![16, 17],
        a_prev: 9,
        count_prev: 256,
        gap_prev: None,
    };
    let (n, a) = plan_parameters(&sched, &cfg, &state).unwrap();
    println!("k=5 -> n={n} a={a}");
}
