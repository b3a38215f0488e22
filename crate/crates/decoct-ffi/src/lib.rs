// FFI surface; filled in later.
