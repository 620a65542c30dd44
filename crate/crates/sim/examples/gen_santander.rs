//! Regenerates `seeds/santander.topo`.
//!
//! cargo run -p citytb-sim --example gen_santander > seeds/santander.topo

use citytb_core::GeoPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAMPPOSTS: usize = 740;
const PARKING: usize = 390;
const IRRIGATION: usize = 48;
const VEHICLES: usize = 150;
const URBAN_CLUSTERS: usize = 20;
const IRRIGATION_CLUSTERS: usize = 3;
const REPEATERS_PER_CLUSTER: usize = 2;
const SPACING_M: f64 = 40.0;
const CLUSTER_PITCH_M: f64 = 700.0;

fn lamppost_sensors(i: usize) -> String {
    let mut s = Vec::new();
    if i < 600 {
        s.push("temperature:celsius:0.5");
    }
    if (240..740).contains(&i) {
        s.push("light:lux");
    }
    if i < 55 {
        s.push("noise:dba:1");
    }
    if (55..85).contains(&i) {
        s.push("co:ppm");
    }
    s.join(",")
}

fn irrigation_sensors(j: usize) -> String {
    let mut s = Vec::new();
    if j < 44 {
        s.extend(["temperature:celsius:0.3", "relative-humidity:percent"]);
    }
    if j < 24 {
        s.extend(["soil-moisture-tension:centibar", "soil-temperature:celsius"]);
    }
    if (44..47).contains(&j) {
        s.extend([
            "rainfall:mm",
            "wind-speed:mps",
            "solar-radiation:wm2",
            "atmospheric-pressure:hpa",
        ]);
    }
    if j >= 46 {
        s.push("water-flow:lpm");
    }
    s.join(",")
}

/// Cells of a square grid around the gateway, nearest first, gateway excluded.
fn grid_cells(center: GeoPoint, n: usize) -> Vec<GeoPoint> {
    let side = 9i32;
    let mut cells: Vec<(i32, i32)> = (-side / 2..=side / 2)
        .flat_map(|r| (-side / 2..=side / 2).map(move |c| (r, c)))
        .filter(|&(r, c)| (r, c) != (0, 0))
        .collect();
    cells.sort_by_key(|&(r, c)| (r.abs().max(c.abs()), r, c));
    cells
        .into_iter()
        .take(n)
        .map(|(r, c)| center.offset_m(-SPACING_M * r as f64, SPACING_M * c as f64))
        .collect()
}

fn main() {
    let origin = GeoPoint::new(43.4700, -3.8300);
    let mut rng = ChaCha8Rng::seed_from_u64(2010);
    println!("# Paper-scale deployment of the city testbed. Generated by gen_santander.");
    println!("namespace smartsantander santander");
    println!("link range=75 loss=0 latency=20 seed=2010");
    println!();
    let mut centers = Vec::new();
    for k in 0..URBAN_CLUSTERS + IRRIGATION_CLUSTERS {
        let (r, c) = (k / 5, k % 5);
        let center = origin.offset_m(-CLUSTER_PITCH_M * r as f64, CLUSTER_PITCH_M * c as f64);
        centers.push(center);
        println!(
            "gateway gw{:02} lat={:.6} lon={:.6} uplink=wired",
            k + 1,
            center.lat,
            center.lon
        );
    }
    let mut lamp = 0;
    let mut park = 0;
    let mut rep = 0;
    for (k, center) in centers.iter().enumerate().take(URBAN_CLUSTERS) {
        println!();
        let lamps = LAMPPOSTS / URBAN_CLUSTERS;
        let parks = PARKING / URBAN_CLUSTERS + usize::from(k < PARKING % URBAN_CLUSTERS);
        let mut cells = grid_cells(*center, lamps + parks + REPEATERS_PER_CLUSTER).into_iter();
        let gw = format!("gw{:02}", k + 1);
        for _ in 0..lamps {
            let p = cells.next().unwrap();
            println!(
                "node lp{lamp:04} role=experimentation class=lamppost cluster={gw} lat={:.6} lon={:.6} sensors={}",
                p.lat,
                p.lon,
                lamppost_sensors(lamp)
            );
            lamp += 1;
        }
        for _ in 0..REPEATERS_PER_CLUSTER {
            let p = cells.next().unwrap();
            println!(
                "node rp{rep:03} role=infrastructural class=repeater cluster={gw} lat={:.6} lon={:.6}",
                p.lat, p.lon
            );
            rep += 1;
        }
        for _ in 0..parks {
            let p = cells.next().unwrap();
            println!(
                "node pk{park:04} role=service-only class=parking cluster={gw} lat={:.6} lon={:.6} sensors=car-presence:bool",
                p.lat, p.lon
            );
            park += 1;
        }
    }
    let mut irr = 0;
    for k in URBAN_CLUSTERS..URBAN_CLUSTERS + IRRIGATION_CLUSTERS {
        println!();
        let gw = format!("gw{:02}", k + 1);
        let n = IRRIGATION / IRRIGATION_CLUSTERS;
        for p in grid_cells(centers[k], n) {
            println!(
                "node ir{irr:02} role=service-only class=irrigation cluster={gw} lat={:.6} lon={:.6} sensors={} period=600s",
                p.lat,
                p.lon,
                irrigation_sensors(irr)
            );
            irr += 1;
        }
    }
    assert_eq!((lamp, park, irr), (LAMPPOSTS, PARKING, IRRIGATION));
    println!();
    let span_n = 3.0 * CLUSTER_PITCH_M;
    let span_e = 4.0 * CLUSTER_PITCH_M;
    for v in 0..VEHICLES {
        let class = if v < 100 { "bus" } else { "taxi" };
        let waypoints: Vec<String> = (0..4)
            .map(|_| {
                let p = origin.offset_m(-rng.gen_range(0.0..span_n), rng.gen_range(0.0..span_e));
                format!("{:.6}:{:.6}", p.lat, p.lon)
            })
            .collect();
        println!(
            "mobile {class}{v:03} role=experimentation class=vehicle route={} speed={:.1} sensors=no2:ugm3,co:ppm,o3:ugm3,particles:ugm3,temperature:celsius,relative-humidity:percent",
            waypoints.join(";"),
            rng.gen_range(5.0..14.0)
        );
    }
}
