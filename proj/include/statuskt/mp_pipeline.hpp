#pragma once

// Teacher-student-teacher annotation pipeline: prompts, parsers, clients,
// cache and orchestration.

#include "statuskt/mp/client.hpp"
#include "statuskt/mp/pipeline.hpp"
#include "statuskt/mp/prompts.hpp"
#include "statuskt/mp/rubric.hpp"
#include "statuskt/mp/templates.hpp"
