mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use common::*;
use hbscan_core::models::ModelBundle;
use hbscan_service::http::router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "hbscan-test-boundary";

fn multipart(fields: &[(&str, &[u8])]) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, bytes) in fields {
        out.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"").as_bytes());
        if *name == "image" {
            out.extend_from_slice(b"; filename=\"x.png\"\r\nContent-Type: image/png");
        }
        out.extend_from_slice(b"\r\n\r\n");
        out.extend_from_slice(bytes);
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    out
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    send(app, req.body(body).unwrap()).await
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn upload(app: &Router, uri: &str, fields: &[(&str, &[u8])]) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(fields)))
        .unwrap();
    send(app, req).await
}

#[tokio::test]
async fn scripted_session_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(open(dir.path(), Some(ModelBundle::constant([6.0, 10.0, 14.0]))));
    let app = router(svc, None);

    let (s, v) = call(&app, "POST", "/patients", Some(json!({"id": "ana", "age_years": 30, "sex": "female"}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let (s, v) = call(&app, "POST", "/patients", Some(json!({"id": "ana", "age_years": 30, "sex": "female"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "conflict");
    let (s, v) = call(&app, "GET", "/patients/ana", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["group"], "woman_nonpregnant");
    assert_eq!(v["thresholds"]["mild_below"], 12.0);

    let (s, v) = call(&app, "POST", "/patients/ana/screenings", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "no_captures");

    let images = pngs(0);
    for (region, bytes) in ["nailbed", "conjunctiva", "tongue"].iter().zip(&images) {
        let (s, v) = upload(&app, "/patients/ana/captures", &[("region", region.as_bytes()), ("image", bytes), ("timestamp", b"100")]).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        assert_eq!(v["region"], *region);
    }
    let (s, v) = upload(&app, "/patients/ana/captures", &[("region", b"elbow"), ("image", &images[0])]).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    let (s, v) = upload(&app, "/patients/ana/captures", &[("region", b"tongue"), ("image", b"garbage")]).await;
    assert_eq!((s, v["stage"].as_str()), (StatusCode::BAD_REQUEST, Some("imaging")));

    let (s, v) = call(&app, "POST", "/patients/ana/screenings", Some(json!({"timestamp": 200}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["raw_hb"], 6.0);
    assert_eq!(v["severity"], "severe");
    assert_eq!(v["regions"].as_array().unwrap().len(), 3);

    let (s, v) = call(&app, "POST", "/patients/ana/reports", Some(json!({"hb": 8.0, "timestamp": 300}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["calibration"]["offset"], 2.0);
    let (s, v) = call(&app, "POST", "/patients/ana/reports", Some(json!({"text": "WBC 8.1"}))).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("report_unparseable")));
    let (s, v) = upload(&app, "/patients/ana/reports", &[("image", b"jpeg")]).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_GATEWAY, Some("ocr_unavailable")));

    let (s, v) = call(&app, "GET", "/patients/ana/history", None).await;
    assert_eq!(s, StatusCode::OK);
    let kinds: Vec<_> = v.as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["screening", "report"]);

    let (s, v) = call(&app, "POST", "/admin/retrain", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["outcome"], "no_op");
    let (s, v) = call(&app, "GET", "/admin/bundle", None).await;
    assert_eq!((s, v["version"].as_u64()), (StatusCode::OK, Some(1)));
    let (s, _) = call(&app, "GET", "/admin/bundle?version=9", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call(&app, "GET", "/patients/bob/history", None).await;
    assert_eq!((s, v["stage"].as_str()), (StatusCode::NOT_FOUND, Some("registry")));
}

#[tokio::test]
async fn static_token_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Arc::new(open(dir.path(), Some(ModelBundle::constant([6.0, 10.0, 14.0]))));
    let app = router(svc, Some("s3cret".into()));
    let (s, v) = call(&app, "GET", "/admin/bundle", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("unauthorized")));
    let req = Request::get("/admin/bundle").header(header::AUTHORIZATION, "Bearer s3cret").body(Body::empty()).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::OK);
}
