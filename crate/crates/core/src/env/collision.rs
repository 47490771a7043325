use crate::dynamics::VehicleState;
use crate::road::RoadNetwork;
use crate::VehicleId;
use std::collections::BTreeSet;

/// Overlapping footprints as ordered `(low, high)` id pairs, plus `(id, id)` for
/// every vehicle whose centre has left the drivable surface.
pub fn detect_collisions<'a>(vehicles: impl IntoIterator<Item = &'a VehicleState>, road: &RoadNetwork) -> BTreeSet<(VehicleId, VehicleId)> {
    let vehicles: Vec<&VehicleState> = vehicles.into_iter().collect();
    let rects: Vec<_> = vehicles.iter().map(|v| v.footprint()).collect();
    let mut hits = BTreeSet::new();
    for i in 0..vehicles.len() {
        if !road.contains(vehicles[i].position) {
            hits.insert((vehicles[i].id, vehicles[i].id));
        }
        for j in i + 1..vehicles.len() {
            // cheap reject on centre distance before the separating-axis test
            let reach = 0.5 * (vehicles[i].length.hypot(vehicles[i].width) + vehicles[j].length.hypot(vehicles[j].width));
            if (vehicles[i].position - vehicles[j].position).norm() > reach {
                continue;
            }
            if rects[i].overlaps(&rects[j]) {
                let (a, b) = (vehicles[i].id, vehicles[j].id);
                hits.insert((a.min(b), a.max(b)));
            }
        }
    }
    hits
}
