#![allow(dead_code)]

use proptest::prelude::*;
use rroi_core::geometry::{OrientedBox, RigidMotion};
use std::f64::consts::{PI, TAU};

pub fn obb() -> impl Strategy<Value = OrientedBox> {
    (
        -50.0..50.0f64,
        -50.0..50.0f64,
        0.5..30.0f64,
        0.5..30.0f64,
        -TAU..TAU,
    )
        .prop_map(|(cx, cy, w, h, t)| OrientedBox::new(cx, cy, w, h, t).unwrap())
}

pub fn canonical_obb() -> impl Strategy<Value = OrientedBox> {
    obb().prop_map(|b| b.canonical())
}

/// Boxes close to each other, so overlaps are common.
pub fn nearby_pair() -> impl Strategy<Value = (OrientedBox, OrientedBox)> {
    (
        obb(),
        -5.0..5.0f64,
        -5.0..5.0f64,
        0.5..2.0f64,
        0.5..2.0f64,
        -PI..PI,
    )
        .prop_map(|(a, dx, dy, sw, sh, dt)| {
            let b = OrientedBox::new(
                a.cx() + dx,
                a.cy() + dy,
                a.w() * sw,
                a.h() * sh,
                a.theta() + dt,
            )
            .unwrap();
            (a, b)
        })
}

pub fn motion() -> impl Strategy<Value = RigidMotion> {
    (-PI..PI, -100.0..100.0f64, -100.0..100.0f64).prop_map(|(r, x, y)| RigidMotion::new(r, x, y))
}

/// Angle difference on the circle of period `period`.
pub fn angle_gap(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

pub mod oracles;

/// A small random instance whose boxes overlap often.
pub fn crowded_boxes(rng: &mut impl rand::Rng, n: usize) -> Vec<OrientedBox> {
    (0..n)
        .map(|_| {
            OrientedBox::new(
                rng.random_range(0.0..12.0),
                rng.random_range(0.0..12.0),
                rng.random_range(2.0..10.0),
                rng.random_range(1.0..6.0),
                rng.random_range(0.0..PI),
            )
            .unwrap()
        })
        .collect()
}
