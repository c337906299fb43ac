use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::dialogue::SystemRef;
use crate::protocol::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub image: String,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

/// How to start a system. Exactly one of the two must be given.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<ContainerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Launch<'a> {
    Process(&'a ProcessSpec),
    Container(&'a ContainerSpec),
}

impl LaunchSpec {
    pub fn process(command: impl Into<String>, args: &[&str]) -> Self {
        Self {
            process: Some(ProcessSpec {
                command: command.into(),
                args: args.iter().map(|s| s.to_string()).collect(),
                env: BTreeMap::new(),
            }),
            container: None,
        }
    }

    pub fn container(image: impl Into<String>) -> Self {
        Self {
            process: None,
            container: Some(ContainerSpec {
                image: image.into(),
                env: BTreeMap::new(),
            }),
        }
    }

    pub fn kind(&self) -> Result<Launch<'_>, RunnerError> {
        match (&self.process, &self.container) {
            (Some(p), None) => Ok(Launch::Process(p)),
            (None, Some(c)) => Ok(Launch::Container(c)),
            (None, None) => Err(RunnerError::InvalidLaunchSpec(
                "neither process nor container given".into(),
            )),
            (Some(_), Some(_)) => Err(RunnerError::InvalidLaunchSpec(
                "both process and container given".into(),
            )),
        }
    }
}

/// A registered system. Also the manifest format for CLI registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub name: String,
    pub version: String,
    pub role: Role,
    pub launch: LaunchSpec,
    /// Port the system listens on inside its environment.
    pub port: u16,
    #[serde(default)]
    pub description: String,
}

fn valid_component(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !s.starts_with('.')
}

/// OCI reference: `[registry/]repository[:tag][@digest]`, lowercase path.
fn valid_image(image: &str) -> bool {
    if image.is_empty() || image.chars().any(char::is_whitespace) {
        return false;
    }
    let name = image.split('@').next().unwrap_or_default();
    let path = match name.rsplit_once(':') {
        Some((p, tag)) if !tag.contains('/') => p,
        _ => name,
    };
    let mut parts = path.split('/').peekable();
    let mut first = true;
    while let Some(part) = parts.next() {
        let is_registry =
            first && parts.peek().is_some() && (part.contains('.') || part.contains(':'));
        first = false;
        if is_registry {
            continue;
        }
        if part.is_empty()
            || !part.chars().all(|c| {
                c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '.' | '_' | '-')
            })
        {
            return false;
        }
    }
    true
}

impl SystemRecord {
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        role: Role,
        launch: LaunchSpec,
        port: u16,
    ) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
            role,
            launch,
            port,
            description: String::new(),
        }
    }

    pub fn system_ref(&self) -> SystemRef {
        SystemRef::new(&self.name, &self.version)
    }

    /// `name@version`.
    pub fn id(&self) -> String {
        self.system_ref().to_string()
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if !valid_component(&self.name) {
            return Err(RunnerError::InvalidRecord(format!(
                "invalid name {:?}",
                self.name
            )));
        }
        if !valid_component(&self.version) {
            return Err(RunnerError::InvalidRecord(format!(
                "invalid version {:?}",
                self.version
            )));
        }
        if self.port == 0 {
            return Err(RunnerError::InvalidRecord("port must be non-zero".into()));
        }
        match self.launch.kind()? {
            Launch::Process(p) if p.command.trim().is_empty() => Err(
                RunnerError::InvalidLaunchSpec("empty process command".into()),
            ),
            Launch::Container(c) if !valid_image(&c.image) => Err(RunnerError::InvalidLaunchSpec(
                format!("invalid image reference {:?}", c.image),
            )),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn launch_kind() {
        assert!(matches!(
            LaunchSpec::default().kind(),
            Err(RunnerError::InvalidLaunchSpec(_))
        ));
        let mut both = LaunchSpec::process("x", &[]);
        both.container = LaunchSpec::container("img").container;
        assert!(both.kind().is_err());
        assert!(matches!(
            LaunchSpec::container("img").kind(),
            Ok(Launch::Container(_))
        ));
    }

    #[test]
    fn image_references() {
        for ok in [
            "naive-sim:2.0",
            "ghcr.io/org/naive-sim:1.0",
            "localhost:5000/a/b",
            "busybox@sha256:abc",
        ] {
            assert!(valid_image(ok), "{ok}");
        }
        for bad in ["", "Upper/Case", "a b", "a//b"] {
            assert!(!valid_image(bad), "{bad}");
        }
    }

    #[test]
    fn manifest_round_trip() {
        let text = r#"{"name":"ref-agent","version":"1.0","role":"AGENT",
            "launch":{"process":{"command":"simlab-ref-agent","args":["--catalog","movies.tsv"]}},
            "port":8000}"#;
        let r: SystemRecord = serde_json::from_str(text).unwrap();
        r.validate().unwrap();
        assert_eq!(r.id(), "ref-agent@1.0");
        let back: SystemRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rejects_path_like_names() {
        let r = SystemRecord::new("../x", "1", Role::Agent, LaunchSpec::process("x", &[]), 1);
        assert!(matches!(r.validate(), Err(RunnerError::InvalidRecord(_))));
    }
}
