#!/usr/bin/env python3
"""
Simple script to run the HeightLane API server (run registry and inference).
"""

import os

import uvicorn
from dotenv import load_dotenv

# Load environment variables from .env file if it exists
load_dotenv()

HOST = os.getenv("HEIGHTLANE_HOST", "0.0.0.0")
PORT = int(os.getenv("HEIGHTLANE_PORT", "8005"))

if __name__ == "__main__":
    print("Starting HeightLane API server...")
    print(f"API Documentation will be available at: http://localhost:{PORT}/docs")
    print("Press Ctrl+C to stop the server")

    uvicorn.run(
        "heightlane.main:app",
        host=HOST,
        port=PORT,
        reload=False,
        log_level="info",
    )
