# Services orchestrating models and schemas
