//! Build recipe steps interpreted by the mock toolchain.
//!
//! Selectors name files inside the build sandbox. A plain relative path
//! (`src/hello.c`, `obj/hello.c.o`, `build/hello`) refers to the fetched
//! source or the output of an earlier step; `input:<package>/<path>` refers
//! to a file inside the output of a declared input.

use serde::{Deserialize, Serialize};

/// Identifies the recipe language understood by [`crate::store::execute_recipe`].
pub const RECIPE_LANGUAGE: &str = "mock-toolchain-v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RecipeStep {
    /// Places the package source at `src/<source name>`.
    FetchSource,
    /// Produces `obj/<file name of source>.o`.
    Compile {
        source: String,
        flags: Vec<String>,
    },
    /// Produces `build/<artifact>`.
    Link {
        objects: Vec<String>,
        artifact: String,
    },
    Install {
        mappings: Vec<InstallMapping>,
    },
    /// Writes `META` into the output.
    EmitMeta,
    /// Writes a text file into the output after `@var@` substitution.
    ///
    /// Recognised variables: `@name@`, `@version@`, `@march@` and `@sandbox@`.
    /// The last one makes a build depend on its scratch directory, which is
    /// only useful for demonstrating unreproducible builds.
    WriteText {
        path: String,
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstallMapping {
    pub from: String,
    pub to: String,
}

impl RecipeStep {
    pub fn kind(&self) -> &'static str {
        match self {
            RecipeStep::FetchSource => "fetch-source",
            RecipeStep::Compile { .. } => "compile",
            RecipeStep::Link { .. } => "link",
            RecipeStep::Install { .. } => "install",
            RecipeStep::EmitMeta => "emit-meta",
            RecipeStep::WriteText { .. } => "write-text",
        }
    }

    /// Package names referenced through `input:` selectors.
    pub fn referenced_inputs(&self) -> Vec<&str> {
        let selectors: Vec<&str> = match self {
            RecipeStep::Compile { source, .. } => vec![source.as_str()],
            RecipeStep::Link { objects, .. } => objects.iter().map(String::as_str).collect(),
            RecipeStep::Install { mappings } => mappings.iter().map(|m| m.from.as_str()).collect(),
            _ => Vec::new(),
        };
        selectors
            .into_iter()
            .filter_map(|s| s.strip_prefix("input:"))
            .map(|rest| rest.split('/').next().unwrap_or(rest))
            .collect()
    }
}
