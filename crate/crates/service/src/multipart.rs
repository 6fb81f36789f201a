//! Just enough `multipart/form-data` parsing to pull one file out of an
//! upload form.

/// Boundary parameter of a `multipart/form-data` content type.
pub fn boundary(content_type: &str) -> Option<String> {
    let (mime, params) = content_type.split_once(';')?;
    if !mime.trim().eq_ignore_ascii_case("multipart/form-data") {
        return None;
    }
    params.split(';').find_map(|p| {
        let (k, v) = p.trim().split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("boundary")
            .then(|| v.trim().trim_matches('"').to_string())
    })
}

fn find(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if needle.is_empty() || from > haystack.len() {
        return None;
    }
    haystack[from..].windows(needle.len()).position(|w| w == needle).map(|i| i + from)
}

/// One part of a form: the raw header block and the body bytes.
#[derive(Debug, PartialEq)]
pub struct Part<'a> {
    pub headers: String,
    pub body: &'a [u8],
}

impl Part<'_> {
    fn disposition_param(&self, key: &str) -> Option<String> {
        let line = self
            .headers
            .lines()
            .find(|l| l.to_ascii_lowercase().starts_with("content-disposition:"))?;
        line.split(';').find_map(|p| {
            let (k, v) = p.trim().split_once('=')?;
            (k.trim() == key).then(|| v.trim().trim_matches('"').to_string())
        })
    }

    pub fn name(&self) -> Option<String> {
        self.disposition_param("name")
    }

    pub fn filename(&self) -> Option<String> {
        self.disposition_param("filename")
    }
}

/// Splits a multipart body into its parts.
pub fn parse<'a>(body: &'a [u8], boundary: &str) -> Result<Vec<Part<'a>>, String> {
    let delim = format!("--{boundary}").into_bytes();
    let mut pos = find(body, &delim, 0).ok_or("multipart boundary not found")? + delim.len();
    let mut parts = Vec::new();
    loop {
        if body[pos..].starts_with(b"--") {
            return Ok(parts);
        }
        if body[pos..].starts_with(b"\r\n") {
            pos += 2;
        }
        let header_end = find(body, b"\r\n\r\n", pos).ok_or("multipart part has no header terminator")?;
        let headers = String::from_utf8_lossy(&body[pos..header_end]).into_owned();
        let start = header_end + 4;
        let mut next_delim = delim.clone();
        next_delim.splice(0..0, *b"\r\n");
        let end = find(body, &next_delim, start).ok_or("multipart body is not terminated")?;
        parts.push(Part {
            headers,
            body: &body[start..end],
        });
        pos = end + next_delim.len();
    }
}

/// The uploaded file: the part named `image`, else the first part with a
/// filename, else the first part.
pub fn pick_file<'a>(parts: &[Part<'a>]) -> Option<&'a [u8]> {
    parts
        .iter()
        .find(|p| p.name().as_deref() == Some("image"))
        .or_else(|| parts.iter().find(|p| p.filename().is_some()))
        .or_else(|| parts.first())
        .map(|p| p.body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn form(boundary: &str, parts: &[(&str, &[u8])]) -> Vec<u8> {
        let mut out = Vec::new();
        for (headers, body) in parts {
            out.extend_from_slice(format!("--{boundary}\r\n{headers}\r\n\r\n").as_bytes());
            out.extend_from_slice(body);
            out.extend_from_slice(b"\r\n");
        }
        out.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
        out
    }

    #[test]
    fn boundary_from_header() {
        assert_eq!(boundary("multipart/form-data; boundary=abc").as_deref(), Some("abc"));
        assert_eq!(boundary("multipart/form-data; charset=x; boundary=\"q r\"").as_deref(), Some("q r"));
        assert_eq!(boundary("image/png"), None);
        assert_eq!(boundary("text/plain; boundary=abc"), None);
    }

    #[test]
    fn picks_named_image_part() {
        let body = form(
            "XyZ",
            &[
                ("Content-Disposition: form-data; name=\"note\"", b"hello"),
                (
                    "Content-Disposition: form-data; name=\"image\"; filename=\"t.png\"\r\nContent-Type: image/png",
                    b"\x89PNG\r\n\x1a\nbinary\r\n--notboundary",
                ),
            ],
        );
        let parts = parse(&body, "XyZ").unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].body, b"hello");
        assert_eq!(pick_file(&parts).unwrap(), b"\x89PNG\r\n\x1a\nbinary\r\n--notboundary");
    }

    #[test]
    fn falls_back_to_filename_then_first() {
        let body = form(
            "b",
            &[
                ("Content-Disposition: form-data; name=\"a\"", b"1"),
                ("Content-Disposition: form-data; name=\"f\"; filename=\"x\"", b"2"),
            ],
        );
        let parts = parse(&body, "b").unwrap();
        assert_eq!(pick_file(&parts).unwrap(), b"2");
        let body = form("b", &[("Content-Disposition: form-data; name=\"a\"", b"1")]);
        assert_eq!(pick_file(&parse(&body, "b").unwrap()).unwrap(), b"1");
    }

    #[test]
    fn malformed_bodies_are_errors() {
        assert!(parse(b"no delimiters here", "b").is_err());
        assert!(parse(b"--b\r\nContent-Disposition: form-data\r\n\r\nunterminated", "b").is_err());
    }
}
