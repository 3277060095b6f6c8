use crate::error::{Error, Result};
use crate::model::{GeoFix, GeoTrack};

/// Parses a GNSS log: CSV with header `timestamp,lat,lon[,alt]` in decimal
/// degrees. Columns are located by name. Row numbers in errors are file
/// line numbers (the header is line 1).
pub fn parse_gnss(bytes: &[u8]) -> Result<GeoTrack> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let headers = reader.headers().map_err(|e| Error::row(1, e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let find = |name: &str| column(name).ok_or_else(|| Error::row(1, format!("missing column `{name}`")));
    let (ti, lati, loni) = (find("timestamp")?, find("lat")?, find("lon")?);
    let alti = column("alt");

    let mut fixes: Vec<GeoFix> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::row(row, e.to_string()))?;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(idx)
                .ok_or_else(|| Error::row(row, format!("missing `{name}` cell")))?;
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::row(row, format!("non-numeric `{name}` value `{raw}`")))
        };
        let t = cell(ti, "timestamp")?;
        let lat = cell(lati, "lat")?;
        let lon = cell(loni, "lon")?;
        let alt = match alti {
            Some(a) if record.get(a).is_some_and(|s| !s.is_empty()) => Some(cell(a, "alt")?),
            _ => None,
        };
        let fix = GeoFix::new(t, lat, lon, alt).map_err(|e| Error::row(row, e.to_string()))?;
        if let Some(prev) = fixes.last() {
            if t <= prev.timestamp {
                return Err(Error::row(row, format!("timestamp {t} does not increase")));
            }
        }
        fixes.push(fix);
    }
    if fixes.is_empty() {
        return Err(Error::row(1, "GNSS log contains no fixes"));
    }
    GeoTrack::new(fixes, None)
}

/// Writes `timestamp,lat,lon,alt`; `alt` is left empty for fixes without one.
pub fn write_gnss(track: &GeoTrack) -> String {
    let mut out = String::from("timestamp,lat,lon,alt\n");
    for f in track.fixes() {
        let alt = f.altitude.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", f.timestamp, f.latitude, f.longitude, alt));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_row() {
        let track = parse_gnss(b"timestamp,lat,lon,alt\n0.0,51.0,-1.0,100\n").unwrap();
        assert_eq!(track.fixes().len(), 1);
        let f = track.fixes()[0];
        assert_eq!((f.timestamp, f.latitude, f.longitude, f.altitude), (0.0, 51.0, -1.0, Some(100.0)));
        assert_eq!(*track.anchor(), f);
    }

    #[test]
    fn three_row_fixture_passthrough() {
        let text = "timestamp,lat,lon\n10.0,51.775123,-1.339001\n10.5,51.775124,-1.339002\n11.0,51.7751255,-1.3390035\n";
        let track = parse_gnss(text.as_bytes()).unwrap();
        let f = track.fixes();
        assert_eq!(f.len(), 3);
        assert_eq!((f[0].timestamp, f[0].latitude, f[0].longitude, f[0].altitude), (10.0, 51.775123, -1.339001, None));
        assert_eq!((f[1].timestamp, f[1].latitude, f[1].longitude), (10.5, 51.775124, -1.339002));
        assert_eq!((f[2].timestamp, f[2].latitude, f[2].longitude), (11.0, 51.7751255, -1.3390035));
    }

    #[test]
    fn latitude_out_of_range() {
        let err = parse_gnss(b"timestamp,lat,lon\n0,95,0\n").unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
        assert!(err.to_string().contains("latitude"));
    }

    #[test]
    fn missing_column_and_bad_cell() {
        assert!(parse_gnss(b"timestamp,lat\n0,1\n").is_err());
        let err = parse_gnss(b"timestamp,lat,lon\n0,1,2\n1,x,2\n").unwrap_err();
        assert!(matches!(err, Error::Row { row: 3, .. }), "{err}");
    }

    #[test]
    fn columns_found_by_name() {
        let track = parse_gnss(b"lon,lat,timestamp\n-1,51,0\n").unwrap();
        assert_eq!(track.fixes()[0].latitude, 51.0);
    }

    #[test]
    fn write_roundtrip() {
        let text = "timestamp,lat,lon,alt\n0.5,51.1,-1.2,90.25\n1,51.2,-1.3,\n";
        let track = parse_gnss(text.as_bytes()).unwrap();
        assert_eq!(parse_gnss(write_gnss(&track).as_bytes()).unwrap(), track);
    }

    proptest! {
        #[test]
        fn never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_gnss(&bytes);
        }
    }
}
