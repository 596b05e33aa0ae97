//! Coordinate round trips and satellite look angles.
//!
//! cargo run --example geodesy

use satweight::geo::{ecef_to_enu, ecef_to_geodetic, elevation_azimuth, geodetic_to_ecef, EcefPosition, GeodeticPosition};

fn main() -> satweight::Result<()> {
    let munich = GeodeticPosition::from_degrees(48.137, 11.575, 520.0);
    let p = geodetic_to_ecef(munich);
    println!("ECEF of Munich: ({:.3}, {:.3}, {:.3}) m", p.x, p.y, p.z);
    let back = ecef_to_geodetic(p)?;
    println!(
        "back to geodetic: lat {:.9} deg, lon {:.9} deg, h {:.6} m",
        back.latitude.to_degrees(),
        back.longitude.to_degrees(),
        back.height
    );

    let sat = EcefPosition::new(15_600e3, 7_540e3, 20_140e3);
    let enu = ecef_to_enu(sat, munich);
    let (el, az) = elevation_azimuth(sat, munich)?;
    println!(
        "satellite at E {:.0} N {:.0} U {:.0} m, elevation {:.2} deg, azimuth {:.2} deg",
        enu.east,
        enu.north,
        enu.up,
        el.to_degrees(),
        az.to_degrees()
    );
    Ok(())
}
