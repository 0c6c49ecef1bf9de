//! Which tap categories fire at each sampling step for a schedule.

use mvoc::denoiser::TapCategory;
use mvoc::injection::{active_categories, InjectionSchedule};

fn main() {
    let sched: InjectionSchedule = match std::env::args().nth(1) {
        Some(json) => serde_json::from_str(&json).expect("injection schedule JSON"),
        None => InjectionSchedule::default(),
    };
    let n = 50;
    println!("{}", serde_json::to_string(&sched).unwrap());
    for c in TapCategory::ALL {
        println!("{:>3}: {} of {n} steps", c.short_name(), sched.active_steps(c, n));
    }
    let mut last = String::new();
    for step in 1..=n {
        let names: Vec<&str> = active_categories(&sched, step, n).iter().map(|c| c.short_name()).collect();
        let now = names.join(",");
        if now != last {
            println!("from step {step:>2}: [{now}]");
            last = now;
        }
    }
}
